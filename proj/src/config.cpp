#include "regalign/config.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "regalign/errors.hpp"

namespace regalign {

using nlohmann::json;

void ModelConfig::validate() const {
  if (level_channels.empty()) throw ConfigError("model.level_channels must not be empty");
  for (int c : level_channels)
    if (c < 1) throw ConfigError("model.level_channels entries must be positive");
  if (jpn_hidden < 1) throw ConfigError("model.jpn_hidden must be positive");
  if (n_basis < 1) throw ConfigError("model.n_basis must be positive");
}

void SolveConfig::validate() const {
  lm.validate();
  if (c2f.finest_stride < 1) throw ConfigError("solve.finest_stride must be at least 1");
  if (c2f.depth_levels < 0) throw ConfigError("solve.depth_levels must be non-negative");
  if (provider != "numerical" && provider != "learned") {
    throw ConfigError("solve.provider must be numerical or learned");
  }
  if (!(prior_depth > 0.0)) throw ConfigError("solve.prior_depth must be positive");
  if (!(focal > 0.0)) throw ConfigError("solve.focal must be positive");
}

void RunConfig::validate() const {
  if (output.empty()) throw ConfigError("output must not be empty");
  if (threads < 0) throw ConfigError("threads must be non-negative");
  dataset.validate();
  model.validate();
  train.validate();
  if (static_cast<int>(train.stage_epochs.size()) != model.levels()) {
    throw ConfigError("train.stage_epochs needs one entry per model level");
  }
  solve.validate();
  bench.validate();
}

namespace {

// Reads the keys of one JSON object and rejects any it was not asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key " + where() + " must be an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }

  const json& at(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }

  void get(const std::string& k, double& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_number()) type_error(k, "a number");
    out = v.get<double>();
  }

  void get(const std::string& k, int& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_number_integer()) type_error(k, "an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) type_error(k, "an int");
    out = static_cast<int>(x);
  }

  void get(const std::string& k, std::uint64_t& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_number_unsigned()) type_error(k, "a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void get(const std::string& k, bool& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_boolean()) type_error(k, "a boolean");
    out = v.get<bool>();
  }

  void get(const std::string& k, std::string& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_string()) type_error(k, "a string");
    out = v.get<std::string>();
  }

  void get(const std::string& k, std::vector<int>& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_array()) type_error(k, "an array of integers");
    std::vector<int> r;
    for (const auto& e : v) {
      if (!e.is_number_integer()) type_error(k, "an array of integers");
      r.push_back(e.get<int>());
    }
    out = std::move(r);
  }

  void get(const std::string& k, std::vector<std::string>& out) {
    if (!has(k)) return;
    const json& v = j_.at(k);
    if (!v.is_array()) type_error(k, "an array of strings");
    std::vector<std::string> r;
    for (const auto& e : v) {
      if (!e.is_string()) type_error(k, "an array of strings");
      r.push_back(e.get<std::string>());
    }
    out = std::move(r);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key: " + key(k));
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  [[noreturn]] void type_error(const std::string& k, const char* what) const {
    throw ConfigError("config key " + key(k) + " must be " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_lm(Section& s, LMConfig& lm) {
  s.get("lambda_init", lm.lambda_init);
  s.get("lambda_up", lm.lambda_up);
  s.get("lambda_down", lm.lambda_down);
  s.get("max_iterations", lm.max_iterations);
  s.get("step_tolerance", lm.step_tolerance);
  s.get("cost_tolerance", lm.cost_tolerance);
  s.get("fixed_iteration_mode", lm.fixed_iteration_mode);
  s.get("max_rejections", lm.max_rejections);
}

json lm_json(const LMConfig& lm) {
  return {{"lambda_init", lm.lambda_init},       {"lambda_up", lm.lambda_up},
          {"lambda_down", lm.lambda_down},       {"max_iterations", lm.max_iterations},
          {"step_tolerance", lm.step_tolerance}, {"cost_tolerance", lm.cost_tolerance},
          {"fixed_iteration_mode", lm.fixed_iteration_mode}, {"max_rejections", lm.max_rejections}};
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  RunConfig c;
  Section root(doc, "");
  root.get("seed", c.seed);
  c.dataset.seed = c.train.seed = c.bench.seed = c.seed;
  root.get("output", c.output);
  root.get("threads", c.threads);

  if (root.has("dataset")) {
    Section s(root.at("dataset"), "dataset");
    auto& d = c.dataset;
    s.get("seed", d.seed);
    s.get("scenes", d.scenes);
    s.get("baselines", d.baselines);
    s.get("min_visible", d.min_visible);
    s.get("max_warp_rms", d.max_warp_rms);
    s.get("max_attempts", d.max_attempts);
    if (s.has("scene")) {
      Section t(s.at("scene"), "dataset.scene");
      auto& p = d.scene;
      t.get("base_depth", p.base_depth);
      t.get("amplitude", p.amplitude);
      t.get("texture_octaves", p.texture_octaves);
      t.get("width", p.width);
      t.get("height", p.height);
      t.get("focal", p.focal);
      t.get("texture_cell", p.texture_cell);
      t.get("relief_cell", p.relief_cell);
      t.finish();
    }
    s.finish();
  }

  if (root.has("model")) {
    Section s(root.at("model"), "model");
    auto& m = c.model;
    s.get("level_channels", m.level_channels);
    s.get("jacobian_net", m.jacobian_net);
    s.get("jpn_hidden", m.jpn_hidden);
    s.get("n_basis", m.n_basis);
    s.get("init_seed", m.init_seed);
    s.finish();
  }

  if (root.has("train")) {
    Section s(root.at("train"), "train");
    auto& t = c.train;
    s.get("learning_rate", t.adam.learning_rate);
    s.get("beta1", t.adam.beta1);
    s.get("beta2", t.adam.beta2);
    s.get("eps", t.adam.eps);
    s.get("unrolled_iterations", t.unrolled_iterations);
    s.get("bootstrap_fraction", t.bootstrap_fraction);
    s.get("loss_weight_lambda", t.loss_weight_lambda);
    s.get("solver_lambda", t.solver_lambda);
    s.get("batch_size", t.batch_size);
    s.get("stage_epochs", t.stage_epochs);
    s.get("rot_range_deg", t.rot_range_deg);
    s.get("trans_fraction", t.trans_fraction);
    s.get("depth_scale_noise", t.depth_scale_noise);
    s.get("depth_mode_noise", t.depth_mode_noise);
    s.get("init_iterations", t.init_iterations);
    s.get("seed", t.seed);
    s.finish();
  }
  c.train.train_jacobian_net = c.model.jacobian_net;

  if (root.has("solve")) {
    Section s(root.at("solve"), "solve");
    auto& v = c.solve;
    if (s.has("lm")) {
      Section l(s.at("lm"), "solve.lm");
      parse_lm(l, v.lm);
      l.finish();
    }
    s.get("finest_stride", v.c2f.finest_stride);
    s.get("depth_levels", v.c2f.depth_levels);
    s.get("provider", v.provider);
    s.get("prior_depth", v.prior_depth);
    s.get("focal", v.focal);
    s.finish();
  }

  if (root.has("bench")) {
    Section s(root.at("bench"), "bench");
    auto& b = c.bench;
    s.get("trials_per_pair", b.trials_per_pair);
    s.get("iterations", b.iterations);
    s.get("max_pairs", b.max_pairs);
    s.get("seed", b.seed);
    s.get("arms", b.arms);
    s.get("depth_scale_noise", b.depth_scale_noise);
    s.get("depth_mode_noise", b.depth_mode_noise);
    s.get("finest_stride", b.c2f.finest_stride);
    if (s.has("lm")) {
      Section l(s.at("lm"), "bench.lm");
      parse_lm(l, b.lm);
      l.finish();
    }
    s.finish();
  }
  c.bench.levels = c.model.levels();
  c.bench.n_basis = c.model.n_basis;

  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  const auto& d = c.dataset;
  const auto& p = d.scene;
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"output", c.output},
      {"threads", c.threads},
      {"dataset",
       {{"seed", d.seed},
        {"scenes", d.scenes},
        {"baselines", d.baselines},
        {"min_visible", d.min_visible},
        {"max_warp_rms", d.max_warp_rms},
        {"max_attempts", d.max_attempts},
        {"scene",
         {{"base_depth", p.base_depth},
          {"amplitude", p.amplitude},
          {"texture_octaves", p.texture_octaves},
          {"width", p.width},
          {"height", p.height},
          {"focal", p.focal},
          {"texture_cell", p.texture_cell},
          {"relief_cell", p.relief_cell}}}}},
      {"model",
       {{"level_channels", c.model.level_channels},
        {"jacobian_net", c.model.jacobian_net},
        {"jpn_hidden", c.model.jpn_hidden},
        {"n_basis", c.model.n_basis},
        {"init_seed", c.model.init_seed}}},
      {"train",
       {{"learning_rate", t.adam.learning_rate},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"eps", t.adam.eps},
        {"unrolled_iterations", t.unrolled_iterations},
        {"bootstrap_fraction", t.bootstrap_fraction},
        {"loss_weight_lambda", t.loss_weight_lambda},
        {"solver_lambda", t.solver_lambda},
        {"batch_size", t.batch_size},
        {"stage_epochs", t.stage_epochs},
        {"rot_range_deg", t.rot_range_deg},
        {"trans_fraction", t.trans_fraction},
        {"depth_scale_noise", t.depth_scale_noise},
        {"depth_mode_noise", t.depth_mode_noise},
        {"init_iterations", t.init_iterations},
        {"seed", t.seed}}},
      {"solve",
       {{"lm", lm_json(c.solve.lm)},
        {"finest_stride", c.solve.c2f.finest_stride},
        {"depth_levels", c.solve.c2f.depth_levels},
        {"provider", c.solve.provider},
        {"prior_depth", c.solve.prior_depth},
        {"focal", c.solve.focal}}},
      {"bench",
       {{"trials_per_pair", c.bench.trials_per_pair},
        {"iterations", c.bench.iterations},
        {"max_pairs", c.bench.max_pairs},
        {"seed", c.bench.seed},
        {"arms", c.bench.arms},
        {"depth_scale_noise", c.bench.depth_scale_noise},
        {"depth_mode_noise", c.bench.depth_mode_noise},
        {"finest_stride", c.bench.c2f.finest_stride},
        {"lm", lm_json(c.bench.lm)}}},
  };
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key has an empty component: " + path);
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override key " + path + " descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace regalign
