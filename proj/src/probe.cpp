#include "raglc/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>

#include "json.hpp"
#include "raglc/corpus.hpp"
#include "raglc/util.hpp"

namespace raglc::probe {

using nlohmann::json;

std::string_view probe_target_str(ProbeTarget t) {
    switch (t) {
        case ProbeTarget::ideal: return "ideal";
        case ProbeTarget::route: return "route";
        case ProbeTarget::doc_type: return "doc_type";
        case ProbeTarget::task_type: return "task_type";
    }
    return "ideal";
}

ProbeTarget probe_target_parse(std::string_view s) {
    const std::string v = util::lower(util::trim(s));
    if (v == "ideal") return ProbeTarget::ideal;
    if (v == "route") return ProbeTarget::route;
    if (v == "doc_type") return ProbeTarget::doc_type;
    if (v == "task_type") return ProbeTarget::task_type;
    throw SchemaError("unknown probe target \"" + std::string(s) + "\"");
}

std::size_t target_classes(ProbeTarget t) {
    switch (t) {
        case ProbeTarget::ideal:
        case ProbeTarget::route: return 2;
        case ProbeTarget::doc_type: return 7;   // union of source-corpus document categories
        case ProbeTarget::task_type: return 4;  // location, reasoning, comparison, hallucination
    }
    return 2;
}

void ProbeDataset::validate() const {
    if (dim == 0) throw SchemaError("probe dataset: dim must be > 0");
    if (classes < 2) throw SchemaError("probe dataset: classes must be >= 2");
    if (vectors.size() != labels.size() || vectors.size() != train_mask.size())
        throw SchemaError("probe dataset: vectors, labels and train_mask must align");
    if (vectors.empty()) throw SchemaError("probe dataset: no rows");
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != dim)
            throw SchemaError("probe dataset: row " + std::to_string(i) + " has width " +
                              std::to_string(vectors[i].size()) + ", expected " +
                              std::to_string(dim));
        if (labels[i] < 0 || std::size_t(labels[i]) >= classes)
            throw SchemaError("probe dataset: row " + std::to_string(i) + " label " +
                              std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
        for (double v : vectors[i])
            if (!std::isfinite(v))
                throw SchemaError("probe dataset: row " + std::to_string(i) +
                                  " contains a non-finite value");
    }
}

std::vector<double> ProbeModel::logits(std::span<const double> x) const {
    if (x.size() != dim) throw std::invalid_argument("probe model: input width mismatch");
    std::vector<double> z(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        double acc = bias[c];
        const double* w = weights.data() + c * dim;
        for (std::size_t j = 0; j < dim; ++j) acc += w[j] * x[j];
        z[c] = acc;
    }
    return z;
}

int ProbeModel::predict(std::span<const double> x) const {
    const auto z = logits(x);
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c)
        if (z[c] > z[best]) best = c;  // strict: ties keep the lowest index
    return static_cast<int>(best);
}

namespace {

/// Numerically stable in-place softmax.
void softmax(std::vector<double>& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

}  // namespace

double probe_objective(const ProbeModel& model, const ProbeDataset& ds, double l2,
                       std::vector<double>* grad) {
    std::size_t n_train = 0;
    for (bool t : ds.train_mask) n_train += t;
    if (n_train == 0) throw SchemaError("probe: no training rows");

    const std::size_t wsize = model.classes * model.dim;
    if (grad) {
        grad->assign(wsize + model.classes, 0.0);
    }

    double loss = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!ds.train_mask[i]) continue;
        std::vector<double> p = model.logits(ds.vectors[i]);
        softmax(p);
        const int y = ds.labels[i];
        loss += -std::log(std::max(p[std::size_t(y)], 1e-300));
        if (grad) {
            for (std::size_t c = 0; c < model.classes; ++c) {
                const double delta = p[c] - (std::size_t(y) == c ? 1.0 : 0.0);
                double* gw = grad->data() + c * model.dim;
                const auto& x = ds.vectors[i];
                for (std::size_t j = 0; j < model.dim; ++j) gw[j] += delta * x[j];
                (*grad)[wsize + c] += delta;
            }
        }
    }
    loss /= double(n_train);

    double penalty = 0.0;
    for (double w : model.weights) penalty += w * w;
    loss += 0.5 * l2 * penalty;

    if (grad) {
        const double inv_n = 1.0 / double(n_train);
        for (std::size_t k = 0; k < wsize; ++k)
            (*grad)[k] = (*grad)[k] * inv_n + l2 * model.weights[k];
        for (std::size_t c = 0; c < model.classes; ++c) (*grad)[wsize + c] *= inv_n;
    }
    return loss;
}

TrainResult train_probe(const ProbeDataset& ds, const TrainOptions& opts) {
    ds.validate();
    if (opts.learning_rate <= 0) throw std::invalid_argument("train_probe: learning_rate must be > 0");
    if (opts.l2 < 0) throw std::invalid_argument("train_probe: l2 must be >= 0");

    TrainResult result;
    ProbeModel& model = result.model;
    model.dim = ds.dim;
    model.classes = ds.classes;
    model.weights.assign(ds.classes * ds.dim, 0.0);  // zero init: deterministic
    model.bias.assign(ds.classes, 0.0);

    const std::size_t wsize = model.weights.size();
    std::vector<double> grad;
    result.loss_history.reserve(opts.iterations + 1);
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        const double loss = probe_objective(model, ds, opts.l2, &grad);
        if (!std::isfinite(loss))
            throw DivergenceError(it, "train_probe: non-finite loss at iteration " +
                                          std::to_string(it) +
                                          " (reduce the learning rate)");
        result.loss_history.push_back(loss);
        for (std::size_t k = 0; k < wsize; ++k) model.weights[k] -= opts.learning_rate * grad[k];
        for (std::size_t c = 0; c < model.classes; ++c)
            model.bias[c] -= opts.learning_rate * grad[wsize + c];
    }
    const double final_loss = probe_objective(model, ds, opts.l2, nullptr);
    if (!std::isfinite(final_loss))
        throw DivergenceError(opts.iterations, "train_probe: non-finite final loss");
    result.loss_history.push_back(final_loss);
    return result;
}

double probe_accuracy(const ProbeModel& model, const ProbeDataset& ds, bool on_train) {
    ds.validate();
    std::size_t n = 0, correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.train_mask[i] != on_train) continue;
        ++n;
        if (model.predict(ds.vectors[i]) == ds.labels[i]) ++correct;
    }
    if (n == 0)
        throw SchemaError(std::string("probe_accuracy: no ") + (on_train ? "train" : "test") +
                          " rows to score");
    return double(correct) / double(n);
}

ProbeDataset load_vector_file(std::istream& in, ProbeTarget target) {
    ProbeDataset ds;
    ds.classes = target_classes(target);
    const std::string target_name(probe_target_str(target));

    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("vector file line " + std::to_string(lineno) +
                              ": malformed JSON: " + e.what());
        }

        if (!header_seen) {
            if (!rec.is_object() || !rec.contains("dim") || !rec["dim"].is_number_unsigned())
                throw SchemaError("vector file: first record must be a header with \"dim\"");
            ds.dim = rec["dim"].get<std::size_t>();
            if (ds.dim == 0) throw SchemaError("vector file: dim must be > 0");
            header_seen = true;
            continue;
        }

        if (!rec.contains("labels") || !rec["labels"].is_object())
            throw SchemaError("vector file line " + std::to_string(lineno) +
                              ": row needs a \"labels\" object");
        const json& labels = rec["labels"];
        if (!labels.contains(target_name))
            throw SchemaError("vector file line " + std::to_string(lineno) +
                              ": no \"" + target_name + "\" label");
        const int label = labels[target_name].get<int>();

        std::vector<double> vec;
        if (rec.contains("vector")) {
            if (!rec["vector"].is_array())
                throw SchemaError("vector file line " + std::to_string(lineno) +
                                  ": \"vector\" must be an array");
            vec = rec["vector"].get<std::vector<double>>();
        } else if (rec.contains("vector_b64")) {
            const auto bytes = util::base64_decode(rec["vector_b64"].get<std::string>());
            if (bytes.size() % 4 != 0)
                throw SchemaError("vector file line " + std::to_string(lineno) +
                                  ": vector_b64 length is not a multiple of 4");
            vec.resize(bytes.size() / 4);
            for (std::size_t i = 0; i < vec.size(); ++i) {
                float f;
                std::memcpy(&f, bytes.data() + 4 * i, 4);
                vec[i] = double(f);
            }
        } else {
            throw SchemaError("vector file line " + std::to_string(lineno) +
                              ": row needs \"vector\" or \"vector_b64\"");
        }
        if (vec.size() != ds.dim)
            throw SchemaError("vector file line " + std::to_string(lineno) + ": row width " +
                              std::to_string(vec.size()) + " != header dim " +
                              std::to_string(ds.dim));

        bool train = true;
        if (rec.contains("split"))
            train = corpus::split_parse(rec["split"].get<std::string>()) == corpus::Split::train;

        ds.vectors.push_back(std::move(vec));
        ds.labels.push_back(label);
        ds.train_mask.push_back(train);
    }
    if (!header_seen) throw SchemaError("vector file: empty (no header record)");
    ds.validate();
    return ds;
}

}  // namespace raglc::probe
