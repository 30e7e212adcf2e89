#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "raglc/types.hpp"

namespace raglc::probe {

/// What a probe predicts from a hidden-state vector.
enum class ProbeTarget { ideal, route, doc_type, task_type };

std::string_view probe_target_str(ProbeTarget t);
ProbeTarget probe_target_parse(std::string_view s);

/// Fixed class counts per target (binary routes; the standard document and
/// task taxonomies).
std::size_t target_classes(ProbeTarget t);

/// A labelled set of fixed-width vectors with a train/test partition.
struct ProbeDataset {
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::vector<std::vector<double>> vectors;
    std::vector<int> labels;       ///< 0-based, < classes
    std::vector<bool> train_mask;  ///< true = train row

    std::size_t size() const { return vectors.size(); }
    void validate() const;  ///< throws SchemaError on any shape violation
};

/// Multinomial logistic probe: row-major [classes x dim] weights plus bias.
struct ProbeModel {
    std::size_t dim = 0;
    std::size_t classes = 0;
    std::vector<double> weights;  ///< classes * dim, row-major
    std::vector<double> bias;     ///< classes

    std::vector<double> logits(std::span<const double> x) const;
    /// argmax of logits; exact ties resolve to the lowest class index.
    int predict(std::span<const double> x) const;
};

struct TrainOptions {
    double learning_rate = 0.1;
    std::size_t iterations = 2000;
    double l2 = 1e-4;  ///< ridge penalty on weights (bias unpenalized)
    /// Reserved for stochastic variants; full-batch descent from zero
    /// initialization makes no random choices.
    std::uint64_t seed = 0;
};

struct TrainResult {
    ProbeModel model;
    /// Objective before each update plus a final entry, so front() is the
    /// zero-init loss ln(classes) and back() is the converged value.
    std::vector<double> loss_history;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t iteration, const std::string& msg)
        : std::runtime_error(msg), iteration(iteration) {}
    std::size_t iteration;
};

/// Mean softmax cross-entropy over the rows of `ds` selected by
/// `train_rows`, plus (l2/2)*||W||^2. Writes the full gradient (weights
/// then bias, same layout as the model) when grad != nullptr. Exposed so
/// analytic gradients can be checked against finite differences.
double probe_objective(const ProbeModel& model, const ProbeDataset& ds, double l2,
                       std::vector<double>* grad);

/// Deterministic full-batch gradient descent from zero init. No stochastic
/// anything: the same dataset and options give the same model everywhere.
/// Non-finite loss raises DivergenceError with the iteration index.
TrainResult train_probe(const ProbeDataset& ds, const TrainOptions& opts);

/// Accuracy over the test rows (default) or training rows. An empty
/// selection is an error rather than a silent 0/0.
double probe_accuracy(const ProbeModel& model, const ProbeDataset& ds, bool on_train = false);

/// Reads a vector file: line-delimited JSON whose first record is a header
/// {"dim": D, ...} and whose remaining records are rows
/// {"id", "labels": {target: int, ...}, "vector": [..] | "vector_b64": ...,
///  "split": "train"|"test"}. vector_b64 holds little-endian float32s.
/// Rows missing the requested target label are errors; a missing split
/// field defaults to train.
ProbeDataset load_vector_file(std::istream& in, ProbeTarget target);

}  // namespace raglc::probe
