#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "raglc/corpus.hpp"
#include "raglc/pipeline.hpp"
#include "raglc/promptkit.hpp"
#include "raglc/types.hpp"

namespace raglc::distill {

/// One reasoning sample drawn from a teacher router, frozen with the exact
/// prompt context it saw so the prompt can be re-rendered bit-for-bit at
/// export time.
struct TeacherSample {
    std::string case_id;
    std::string query;
    corpus::TaskType task_type;
    corpus::DocumentMeta meta;
    pipeline::RagConfig rag;
    std::string answer_model_context;  ///< answering model tag in the prompt
    std::size_t answer_window = 128000;
    promptkit::VariantMask mask = promptkit::VariantMask::all();
    promptkit::ReasoningTrace trace;
    Route decision = Route::RAG;
    std::string teacher;  ///< teacher model tag, for per-teacher export counts
};

struct FilterResult {
    std::vector<TeacherSample> kept;
    std::size_t total = 0;
    double retention = 0.0;  ///< kept / total
};

/// Keeps exactly the samples whose decision matches the ideal label for
/// their case. Samples whose trace carries a decision tag inconsistent with
/// the recorded decision are schema errors, as are samples without an ideal
/// label.
FilterResult rejection_filter(std::span<const TeacherSample> samples,
                              const std::map<std::string, Route>& ideals);

/// Raised when a sample outside the training split reaches export.
class LeakageError : public std::runtime_error {
public:
    explicit LeakageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ExportSummary {
    std::size_t records = 0;
    std::map<std::string, std::size_t> by_teacher;
};

/// Serializes the assistant turn for one sample: the reasoning skeleton
/// with only the populated sections, closed by the canonical decision tag.
/// Output always parses back to a clean decision.
std::string format_sft_target(const promptkit::ReasoningTrace& trace, Route decision);

/// Writes filtered samples as line-delimited conversation records
/// ({"case_id", "teacher", "messages": [user, assistant]}). Every sample is
/// re-checked at the door: its case must sit in the training split
/// (LeakageError otherwise — val/test cases must never train the student)
/// and its decision must still equal the ideal label.
ExportSummary export_sft(std::span<const TeacherSample> kept,
                         const std::map<std::string, Route>& ideals,
                         const std::map<std::string, corpus::Split>& splits, std::ostream& out);

/// Human-auditable sidecar: sample counts, retention, per-teacher volumes.
void write_distill_manifest(std::ostream& out, const FilterResult& filter,
                            const ExportSummary& exported);

}  // namespace raglc::distill
