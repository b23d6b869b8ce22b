#pragma once
#include <string>
#include <vector>

#include "json.hpp"
#include "kandinsky/core.hpp"
#include "kandinsky/eval.hpp"
#include "kandinsky/groups.hpp"
#include "kandinsky/methods.hpp"
#include "kandinsky/scores.hpp"

namespace kandinsky::io {

using Json = nlohmann::ordered_json;

// CSV layout: header row with columns x0..x{p-1}, y, optional z, optional b0..b{m-1}.
Dataset read_csv(const std::string& path, Task task, int n_classes = 0);
void write_csv(const std::string& path, const Dataset& dataset);

Json load_json_file(const std::string& path);
void save_json_file(const std::string& path, const Json& j);
std::string timestamp_now();

Json score_to_json(const ScoreSpec& s);
ScoreSpec score_from_json(const Json& j);

Json group_spec_to_json(const GroupSpec& g);
GroupSpec group_spec_from_json(const Json& j);

Json recipe_to_json(const BasisRecipe& r);
BasisRecipe recipe_from_json(const Json& j);

Json model_to_json(const CalibratedPredictor& p, bool with_timestamp);
CalibratedPredictor model_from_json(const Json& j);

Json prediction_to_json(const PredictionSet& set, uint64_t row, const std::vector<double>& grid,
                        int n_classes);

Json synth_to_json(const SynthConfig& c);
SynthConfig synth_from_json(const Json& j);

Json eval_groups_to_json(const EvalGroups& g);
EvalGroups eval_groups_from_json(const Json& j);

Json report_to_json(const CoverageReport& r, const Json& config_echo, bool with_timestamp);
std::string report_to_tsv(const CoverageReport& r);
std::string report_to_csv(const CoverageReport& r);  // per-trial flat rows

// Experiment configuration file; CSV paths are resolved relative to the caller.
struct ExperimentFile {
  ExperimentConfig config;
  std::string output_path = "report.json";
  bool with_timestamp = false;
  Json echo;  // effective config after overrides
};
ExperimentFile experiment_from_json(const Json& j);

}  // namespace kandinsky::io
