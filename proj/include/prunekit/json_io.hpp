#pragma once

#include "prunekit/calibrate.hpp"
#include "prunekit/evaluate.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/normfuse.hpp"
#include "prunekit/surgery.hpp"

#include <json.hpp>

#include <string>

namespace prunekit {

nlohmann::json config_json(const ModelConfig& c);
ModelConfig config_from_json_value(const nlohmann::json& j);

nlohmann::json stats_json(const ActivationStats& s);
nlohmann::json scores_json(const ImportanceScores& s);

nlohmann::json plan_json(const PrunePlan& p);
PrunePlan plan_from_json_value(const nlohmann::json& j);
PrunePlan load_plan(const std::string& path);

nlohmann::json surgery_report_json(const SurgeryReport& r);
nlohmann::json absorption_report_json(const AbsorptionReport& r);
nlohmann::json cost_json(const CostEstimate& c);
nlohmann::json eval_report_json(const EvalReport& r);

/// dump(2) + trailing newline, written atomically enough for our purposes.
void write_json(const nlohmann::json& j, const std::string& path);

} // namespace prunekit
