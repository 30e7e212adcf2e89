#include "raglc/distill.hpp"

#include <ostream>

#include "json.hpp"
#include "raglc/util.hpp"

namespace raglc::distill {

using nlohmann::json;

namespace {

void check_trace_consistency(const TeacherSample& s) {
    if (s.trace.decision_text.empty()) return;
    const auto normalized = promptkit::normalize_route_text(s.trace.decision_text);
    if (!normalized || *normalized != s.decision)
        throw SchemaError("sample for case \"" + s.case_id + "\": trace decision tag \"" +
                          s.trace.decision_text + "\" disagrees with recorded decision " +
                          std::string(route_str(s.decision)));
}

Route ideal_for(const std::map<std::string, Route>& ideals, const std::string& case_id) {
    auto it = ideals.find(case_id);
    if (it == ideals.end())
        throw SchemaError("no ideal label for case \"" + case_id + "\"");
    return it->second;
}

}  // namespace

FilterResult rejection_filter(std::span<const TeacherSample> samples,
                              const std::map<std::string, Route>& ideals) {
    FilterResult result;
    result.total = samples.size();
    for (const auto& s : samples) {
        check_trace_consistency(s);
        if (s.decision == ideal_for(ideals, s.case_id)) result.kept.push_back(s);
    }
    result.retention = result.total ? double(result.kept.size()) / double(result.total) : 0.0;
    return result;
}

std::string format_sft_target(const promptkit::ReasoningTrace& trace, Route decision) {
    static constexpr const char* kStepTags[6] = {"step1", "step2", "step3",
                                                 "step4", "step5", "step6_efficiency"};
    std::string out = "<thinking>\n";
    for (int i = 0; i < 6; ++i) {
        if (trace.steps[i].empty()) continue;
        out += "  <";
        out += kStepTags[i];
        out += ">";
        out += trace.steps[i];
        out += "</";
        out += kStepTags[i];
        out += ">\n";
    }
    if (!trace.reflection.empty())
        out += "  <reflection>" + trace.reflection + "</reflection>\n";
    out += "  <decision>";
    out += route_str(decision);
    out += "</decision>\n</thinking>";
    return out;
}

ExportSummary export_sft(std::span<const TeacherSample> kept,
                         const std::map<std::string, Route>& ideals,
                         const std::map<std::string, corpus::Split>& splits, std::ostream& out) {
    ExportSummary summary;
    for (const auto& s : kept) {
        // Hard guards: training data must stay inside the training split and
        // must still match its label. Both are invariant breaches, not
        // skippable records.
        auto split_it = splits.find(s.case_id);
        if (split_it == splits.end())
            throw LeakageError("case \"" + s.case_id + "\" has no split assignment");
        if (split_it->second != corpus::Split::train)
            throw LeakageError("case \"" + s.case_id + "\" sits in the " +
                               std::string(corpus::split_str(split_it->second)) +
                               " split; only train cases may be exported");
        if (s.decision != ideal_for(ideals, s.case_id))
            throw SchemaError("case \"" + s.case_id +
                              "\": exported decision no longer matches its ideal label");

        corpus::QueryCase shim;
        shim.id = s.case_id;
        shim.query = s.query;
        shim.task_type = s.task_type;
        const auto bundle = promptkit::render_router_prompt(
            shim, s.meta, {s.rag, s.answer_model_context, s.answer_window}, s.mask);

        json rec{
            {"case_id", s.case_id},
            {"teacher", s.teacher},
            {"messages",
             json::array({json{{"role", "user"}, {"content", bundle.user}},
                          json{{"role", "assistant"},
                               {"content", format_sft_target(s.trace, s.decision)}}})},
        };
        out << rec.dump() << '\n';
        ++summary.records;
        ++summary.by_teacher[s.teacher];
    }
    return summary;
}

void write_distill_manifest(std::ostream& out, const FilterResult& filter,
                            const ExportSummary& exported) {
    json teachers = json::object();
    for (const auto& [teacher, count] : exported.by_teacher) teachers[teacher] = count;
    json j{{"samples_total", filter.total},
           {"samples_kept", filter.kept.size()},
           {"retention", filter.retention},
           {"records_exported", exported.records},
           {"split", "train"},
           {"teachers", teachers}};
    out << j.dump(2) << '\n';
}

}  // namespace raglc::distill
