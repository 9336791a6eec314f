#include "goatlab/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "goatlab/errors.hpp"

namespace goatlab {

namespace {

using nlohmann::json;

template <typename T>
T require_number(const json& doc, const std::string& key, T fallback, T lo, T hi) {
  if (!doc.contains(key)) return fallback;
  const json& value = doc.at(key);
  if (!value.is_number()) throw config_error("config field '" + key + "' must be a number");
  const double raw = value.get<double>();
  if (raw < static_cast<double>(lo) || raw > static_cast<double>(hi)) {
    std::ostringstream msg;
    msg << "config field '" << key << "' = " << raw << " is outside [" << lo << ", " << hi << "]";
    throw config_error(msg.str());
  }
  return value.get<T>();
}

std::string require_string(const json& doc, const std::string& key, std::string fallback) {
  if (!doc.contains(key)) return fallback;
  if (!doc.at(key).is_string()) throw config_error("config field '" + key + "' must be a string");
  return doc.at(key).get<std::string>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& err) {
    throw config_error(std::string("config is not valid JSON: ") + err.what());
  }
  if (!doc.is_object()) throw config_error("config must be a JSON object");

  static const std::set<std::string> known = {
      "seed",          "task",         "variant",   "E",
      "k",             "r",            "rho",       "eta",
      "balance_coeff", "strategy",     "steps",     "learning_rate",
      "output_dir",    "m",            "n",         "batch",
      "teacher_rank",  "teacher_scale", "noise_std", "reference",
      "compare_with",  "num_seeds",    "record_wall_time"};
  for (const auto& item : doc.items()) {
    if (!known.count(item.key())) {
      throw config_error("unknown config field '" + item.key() + "'");
    }
  }

  RunConfig config;
  TrainConfig& t = config.train;
  t.seed = require_number<std::uint64_t>(doc, "seed", 0, 0, UINT64_MAX);
  t.task = require_string(doc, "task", "teacher-student");
  if (t.task != "teacher-student" && t.task != "clusters") {
    throw config_error("config field 'task' must be teacher-student or clusters");
  }
  t.variant = train_variant_from_string(require_string(doc, "variant", "GOAT"));
  t.experts = require_number<std::size_t>(doc, "E", 8, 1, 4096);
  t.top_k = require_number<std::size_t>(doc, "k", 2, 1, 4096);
  t.total_rank = require_number<std::size_t>(doc, "r", 8, 1, 4096);
  t.rho = require_number<double>(doc, "rho", 10.0, 1e-9, 1e9);
  t.eta = require_number<double>(doc, "eta", 1.0, 1e-9, 1e9);
  t.balance_coeff = require_number<double>(doc, "balance_coeff", 1e-3, 0.0, 1e3);
  t.strategy = strategy_from_string(require_string(doc, "strategy", "O"));
  t.steps = require_number<std::size_t>(doc, "steps", 1000, 0, 10000000);
  t.learning_rate = require_number<double>(doc, "learning_rate", 0.02, 1e-12, 1e3);
  t.m = require_number<std::size_t>(doc, "m", 64, 1, 4096);
  t.n = require_number<std::size_t>(doc, "n", 64, 1, 4096);
  t.batch = require_number<std::size_t>(doc, "batch", 32, 1, 100000);
  t.teacher_rank = require_number<std::size_t>(doc, "teacher_rank", 4, 0, 4096);
  t.teacher_scale = require_number<double>(doc, "teacher_scale", 0.5, -1e6, 1e6);
  t.noise_std = require_number<double>(doc, "noise_std", 0.01, 0.0, 1e6);
  t.reference = require_string(doc, "reference", "");
  if (!t.reference.empty() && t.reference != "FullFT" && t.reference != "FullFTMoE") {
    throw config_error("config field 'reference' must be empty, FullFT or FullFTMoE");
  }
  if (doc.contains("record_wall_time") && !doc.at("record_wall_time").is_boolean()) {
    throw config_error("config field 'record_wall_time' must be a boolean");
  }
  t.record_wall_time = doc.value("record_wall_time", false);

  if (t.top_k > t.experts) throw config_error("config: k must not exceed E");
  if (t.total_rank % t.experts != 0 &&
      (t.variant == TrainVariant::Goat || t.variant == TrainVariant::GoatS ||
       t.variant == TrainVariant::ZeroMoe)) {
    throw config_error("config: E must divide r for mixture variants");
  }

  config.output_dir = require_string(doc, "output_dir", "");
  config.compare_with = require_string(doc, "compare_with", "");
  if (!config.compare_with.empty()) {
    train_variant_from_string(config.compare_with);  // validates the name
  }
  config.num_seeds = require_number<std::size_t>(doc, "num_seeds", 1, 1, 1000);

  if (const char* env_seed = std::getenv("GOATLAB_SEED")) {
    try {
      t.seed = std::stoull(env_seed);
    } catch (const std::exception&) {
      throw config_error("GOATLAB_SEED must be an unsigned integer");
    }
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string run_config_to_json(const RunConfig& config) {
  nlohmann::json doc;
  const TrainConfig& t = config.train;
  doc["seed"] = t.seed;
  doc["task"] = t.task;
  doc["variant"] = to_string(t.variant);
  doc["E"] = t.experts;
  doc["k"] = t.top_k;
  doc["r"] = t.total_rank;
  doc["rho"] = t.rho;
  doc["eta"] = t.eta;
  doc["balance_coeff"] = t.balance_coeff;
  doc["strategy"] = to_string(t.strategy);
  doc["steps"] = t.steps;
  doc["learning_rate"] = t.learning_rate;
  doc["m"] = t.m;
  doc["n"] = t.n;
  doc["batch"] = t.batch;
  doc["teacher_rank"] = t.teacher_rank;
  doc["teacher_scale"] = t.teacher_scale;
  doc["noise_std"] = t.noise_std;
  doc["reference"] = t.reference;
  doc["record_wall_time"] = t.record_wall_time;
  doc["output_dir"] = config.output_dir;
  doc["compare_with"] = config.compare_with;
  doc["num_seeds"] = config.num_seeds;
  return doc.dump(2);
}

}  // namespace goatlab
