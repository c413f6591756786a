#include "sbr/pipeline.hpp"

#include "sbr/rng.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

namespace sbr {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object()) {
    throw ConfigError(context + ": expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError(context + ": unknown key '" + key + "'");
    }
  }
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string activation_to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return j;
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << j.dump(2) << "\n";
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Stage cache manifest: stage id -> {key, outputs}. A stage is fresh when the
// key matches and every output still exists.
class CacheManifest {
 public:
  explicit CacheManifest(const fs::path& out_dir) : file_(out_dir / "cache.json") {
    if (fs::exists(file_)) {
      entries_ = read_json_file(file_);
    } else {
      entries_ = json::object();
    }
  }

  bool fresh(const std::string& stage, const std::string& key,
             const std::vector<fs::path>& outputs) const {
    if (!entries_.contains(stage) || entries_.at(stage).value("key", "") != key) {
      return false;
    }
    for (const auto& p : outputs) {
      if (!fs::exists(p)) {
        return false;
      }
    }
    return true;
  }

  void update(const std::string& stage, const std::string& key,
              const std::vector<fs::path>& outputs) {
    json out_list = json::array();
    for (const auto& p : outputs) {
      out_list.push_back(p.string());
    }
    entries_[stage] = {{"key", key}, {"outputs", out_list}};
    write_json_file(file_, entries_);
  }

 private:
  fs::path file_;
  json entries_;
};

struct Paths {
  fs::path out;
  fs::path expert_data;
  fs::path offline_data;
  fs::path refs;

  fs::path seed_dir(std::uint64_t seed) const {
    return out / ("seed_" + std::to_string(seed));
  }
  fs::path wm(std::uint64_t seed) const { return seed_dir(seed) / "wm.ckpt"; }
  fs::path retrieved(std::uint64_t seed) const { return seed_dir(seed) / "retrieved.jsonl"; }
  fs::path search_report(std::uint64_t seed) const {
    return seed_dir(seed) / "search_report.json";
  }
  fs::path policy(std::uint64_t seed) const { return seed_dir(seed) / "policy.ckpt"; }
  fs::path eval(std::uint64_t seed) const { return seed_dir(seed) / "eval.json"; }
};

Paths resolve_paths(const PipelineConfig& cfg) {
  if (cfg.out_dir.empty()) {
    throw ConfigError("out_dir is required");
  }
  Paths p;
  p.out = cfg.out_dir;
  p.expert_data = cfg.data.expert_path.empty() ? p.out / "data" / "expert.jsonl"
                                               : fs::path(cfg.data.expert_path);
  p.offline_data = cfg.data.offline_path.empty() ? p.out / "data" / "offline.jsonl"
                                                 : fs::path(cfg.data.offline_path);
  p.refs = p.out / "refs.json";
  return p;
}

PointMazeSpec env_spec(const PipelineConfig& cfg) {
  PointMazeSpec spec = resolve_layout(cfg.layout);
  spec.noise_dims = cfg.data.noise_dims;
  return spec;
}

}  // namespace

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot hash missing file: " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return hash_hex(fnv1a(bytes));
}

void DataGenConfig::validate() const {
  if (expert < 0 || wrong_goal < 0 || random_walk < 0 || early_failure < 0 ||
      noise_dims < 0) {
    throw ConfigError("data counts and noise_dims must be >= 0");
  }
  if (wrong_goal > 0 && alt_goals.empty()) {
    throw ConfigError("wrong_goal trajectories need data.alt_goals");
  }
  if (expert_path.empty() != offline_path.empty()) {
    throw ConfigError("set both data.expert_path and data.offline_path or neither");
  }
}

void PipelineConfig::validate() const {
  if (schema_version != 1) {
    throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
  }
  data.validate();
  wm.validate();
  retrieval.validate();
  bc.validate();
  eval.validate();
  if (seeds.empty()) {
    throw ConfigError("seeds must be non-empty");
  }
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  check_keys(j, {"schema_version", "layout", "mode", "out_dir", "data", "wm", "retrieval",
                 "bc", "eval", "seeds"},
             "config");
  PipelineConfig cfg;
  cfg.schema_version = j.value("schema_version", 1);
  cfg.layout = j.value("layout", cfg.layout);
  cfg.mode = bc_mode_from_string(j.value("mode", "sbr"));
  cfg.out_dir = j.value("out_dir", "");
  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d,
               {"seed", "noise_dims", "expert", "wrong_goal", "random_walk",
                "early_failure", "alt_goals", "expert_path", "offline_path"},
               "config.data");
    cfg.data.seed = d.value("seed", cfg.data.seed);
    cfg.data.noise_dims = d.value("noise_dims", cfg.data.noise_dims);
    cfg.data.expert = d.value("expert", cfg.data.expert);
    cfg.data.wrong_goal = d.value("wrong_goal", cfg.data.wrong_goal);
    cfg.data.random_walk = d.value("random_walk", cfg.data.random_walk);
    cfg.data.early_failure = d.value("early_failure", cfg.data.early_failure);
    if (d.contains("alt_goals")) {
      for (const auto& g : d.at("alt_goals")) {
        const auto v = g.get<std::vector<double>>();
        if (v.size() != 2) {
          throw ConfigError("data.alt_goals entries must be [x, y]");
        }
        cfg.data.alt_goals.emplace_back(v[0], v[1]);
      }
    }
    cfg.data.expert_path = d.value("expert_path", "");
    cfg.data.offline_path = d.value("offline_path", "");
  }

  if (j.contains("wm")) {
    const json& w = j.at("wm");
    check_keys(w,
               {"latent_dim", "horizon", "decay", "rollout_mode", "recon_from_encoder",
                "passthrough", "enc_hidden", "dyn_hidden", "dec_hidden", "activation",
                "lr", "batch_size", "epochs"},
               "config.wm");
    cfg.wm.latent_dim = w.value("latent_dim", cfg.wm.latent_dim);
    cfg.wm.horizon = w.value("horizon", cfg.wm.horizon);
    cfg.wm.decay = w.value("decay", cfg.wm.decay);
    if (w.contains("rollout_mode")) {
      cfg.wm.rollout_mode = rollout_mode_from_string(w.at("rollout_mode"));
    }
    cfg.wm.recon_from_encoder = w.value("recon_from_encoder", cfg.wm.recon_from_encoder);
    cfg.wm.passthrough = w.value("passthrough", cfg.wm.passthrough);
    if (w.contains("enc_hidden")) cfg.wm.enc_hidden = w.at("enc_hidden").get<std::vector<Index>>();
    if (w.contains("dyn_hidden")) cfg.wm.dyn_hidden = w.at("dyn_hidden").get<std::vector<Index>>();
    if (w.contains("dec_hidden")) cfg.wm.dec_hidden = w.at("dec_hidden").get<std::vector<Index>>();
    if (w.contains("activation")) {
      cfg.wm.activation = activation_from_string(w.at("activation"));
    }
    cfg.wm.lr = w.value("lr", cfg.wm.lr);
    cfg.wm.batch_size = w.value("batch_size", cfg.wm.batch_size);
    cfg.wm.epochs = w.value("epochs", cfg.wm.epochs);
  }

  if (j.contains("retrieval")) {
    const json& r = j.at("retrieval");
    check_keys(r, {"delta", "steps", "recompute_stats"}, "config.retrieval");
    cfg.retrieval.delta = r.value("delta", cfg.retrieval.delta);
    cfg.retrieval.steps = r.value("steps", cfg.retrieval.steps);
    cfg.retrieval.recompute_stats = r.value("recompute_stats", cfg.retrieval.recompute_stats);
  }

  if (j.contains("bc")) {
    const json& b = j.at("bc");
    check_keys(b,
               {"decay", "hidden", "activation", "fixed_unit_std", "lr", "batch_size",
                "epochs"},
               "config.bc");
    cfg.bc.decay = b.value("decay", cfg.bc.decay);
    if (b.contains("hidden")) cfg.bc.hidden = b.at("hidden").get<std::vector<Index>>();
    if (b.contains("activation")) {
      cfg.bc.activation = activation_from_string(b.at("activation"));
    }
    cfg.bc.fixed_unit_std = b.value("fixed_unit_std", cfg.bc.fixed_unit_std);
    cfg.bc.lr = b.value("lr", cfg.bc.lr);
    cfg.bc.batch_size = b.value("batch_size", cfg.bc.batch_size);
    cfg.bc.epochs = b.value("epochs", cfg.bc.epochs);
  }
  cfg.bc.mode = cfg.mode;
  cfg.retrieval.decay = cfg.bc.decay;

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"episodes", "horizon", "discount"}, "config.eval");
    cfg.eval.episodes = e.value("episodes", cfg.eval.episodes);
    cfg.eval.horizon = e.value("horizon", cfg.eval.horizon);
    cfg.eval.discount = e.value("discount", cfg.eval.discount);
  }

  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const fs::path& path) {
  return from_json(read_json_file(path));
}

json PipelineConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["layout"] = layout;
  j["mode"] = to_string(mode);
  j["out_dir"] = out_dir;
  j["seeds"] = seeds;
  j["data"] = {{"seed", data.seed},
               {"noise_dims", data.noise_dims},
               {"expert", data.expert},
               {"wrong_goal", data.wrong_goal},
               {"random_walk", data.random_walk},
               {"early_failure", data.early_failure},
               {"expert_path", data.expert_path},
               {"offline_path", data.offline_path}};
  if (!data.alt_goals.empty()) {
    json goals = json::array();
    for (const auto& g : data.alt_goals) {
      goals.push_back({g(0), g(1)});
    }
    j["data"]["alt_goals"] = std::move(goals);
  }
  j["wm"] = {{"latent_dim", wm.latent_dim},
             {"horizon", wm.horizon},
             {"decay", wm.decay},
             {"rollout_mode", to_string(wm.rollout_mode)},
             {"recon_from_encoder", wm.recon_from_encoder},
             {"passthrough", wm.passthrough},
             {"enc_hidden", wm.enc_hidden},
             {"dyn_hidden", wm.dyn_hidden},
             {"dec_hidden", wm.dec_hidden},
             {"activation", activation_to_string(wm.activation)},
             {"lr", wm.lr},
             {"batch_size", wm.batch_size},
             {"epochs", wm.epochs}};
  j["retrieval"] = {{"delta", retrieval.delta},
                    {"steps", retrieval.steps},
                    {"recompute_stats", retrieval.recompute_stats}};
  j["bc"] = {{"decay", bc.decay},
             {"hidden", bc.hidden},
             {"activation", activation_to_string(bc.activation)},
             {"fixed_unit_std", bc.fixed_unit_std},
             {"lr", bc.lr},
             {"batch_size", bc.batch_size},
             {"epochs", bc.epochs}};
  j["eval"] = {{"episodes", eval.episodes},
               {"horizon", eval.horizon},
               {"discount", eval.discount}};
  return j;
}

void stage_gen_data(const PipelineConfig& cfg, bool use_cache) {
  cfg.validate();
  const Paths paths = resolve_paths(cfg);
  if (!cfg.data.expert_path.empty()) {
    return;  // externally supplied data
  }
  const PointMazeSpec spec = env_spec(cfg);
  CacheManifest cache(paths.out);
  const std::string key = hash_hex(
      fnv1a(json{{"layout", cfg.layout},
                 {"data", cfg.to_json().at("data")}}
                .dump()));
  if (use_cache && cache.fresh("data", key, {paths.expert_data, paths.offline_data})) {
    log_info("gen-data: cached");
    return;
  }
  std::vector<GeneratorSpec> generators;
  generators.push_back({GeneratorKind::Expert, cfg.data.expert, cfg.data.seed, {}});
  if (cfg.data.wrong_goal > 0) {
    // split the count round-robin over the alternate goals
    const int goals = static_cast<int>(cfg.data.alt_goals.size());
    for (int g = 0; g < goals; ++g) {
      const int count = cfg.data.wrong_goal / goals + (g < cfg.data.wrong_goal % goals ? 1 : 0);
      if (count > 0) {
        generators.push_back({GeneratorKind::WrongGoal, count,
                              cfg.data.seed + static_cast<std::uint64_t>(g),
                              cfg.data.alt_goals[static_cast<std::size_t>(g)]});
      }
    }
  }
  if (cfg.data.random_walk > 0) {
    generators.push_back({GeneratorKind::RandomWalk, cfg.data.random_walk, cfg.data.seed, {}});
  }
  if (cfg.data.early_failure > 0) {
    generators.push_back(
        {GeneratorKind::EarlyFailure, cfg.data.early_failure, cfg.data.seed, {}});
  }
  const auto [expert, offline] = generate_dataset(spec, generators);
  save_dataset(expert, paths.expert_data);
  save_dataset(offline, paths.offline_data);
  cache.update("data", key, {paths.expert_data, paths.offline_data});
  log_info("gen-data: " + std::to_string(expert.size()) + " expert / " +
           std::to_string(offline.size()) + " offline trajectories (" +
           std::to_string(expert.transition_count()) + " / " +
           std::to_string(offline.transition_count()) + " transitions)");
}

namespace {

ReferenceReturns load_or_compute_refs(const PipelineConfig& cfg, const Paths& paths) {
  const PointMazeSpec spec = env_spec(cfg);
  const std::string key =
      hash_hex(fnv1a(json{{"layout", cfg.layout}, {"noise_dims", cfg.data.noise_dims}}.dump()));
  if (fs::exists(paths.refs)) {
    const json j = read_json_file(paths.refs);
    if (j.value("key", "") == key) {
      return ReferenceReturns{j.at("random_return"), j.at("expert_return")};
    }
  }
  const ReferenceReturns refs =
      reference_returns(spec, 100, derive_seed(cfg.data.seed, "refs"));
  write_json_file(paths.refs, json{{"key", key},
                                   {"random_return", refs.random_return},
                                   {"expert_return", refs.expert_return},
                                   {"episodes", 100}});
  return refs;
}

}  // namespace

StageInfo stage_train_wm(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                         std::vector<double>* epoch_loss) {
  const auto start = Clock::now();
  const Paths paths = resolve_paths(cfg);
  CacheManifest cache(paths.out);
  const std::string stage = "wm/seed_" + std::to_string(seed);
  WmConfig wm_cfg = cfg.wm;
  wm_cfg.seed = derive_seed(seed, "wm");
  const std::string key = hash_hex(fnv1a(json{{"wm", cfg.to_json().at("wm")},
                                              {"seed", wm_cfg.seed},
                                              {"expert", file_hash(paths.expert_data)},
                                              {"offline", file_hash(paths.offline_data)}}
                                             .dump()));
  if (use_cache && cache.fresh(stage, key, {paths.wm(seed)})) {
    return {"train_wm", "cached", seconds_since(start)};
  }
  const Dataset expert = load_dataset(paths.expert_data);
  const Dataset offline = load_dataset(paths.offline_data);
  auto [wm, log] = train_world_model(expert, offline, wm_cfg);
  fs::create_directories(paths.seed_dir(seed));
  save_world_model(wm, paths.wm(seed));
  if (epoch_loss != nullptr) {
    *epoch_loss = log.epoch_loss;
  }
  cache.update(stage, key, {paths.wm(seed)});
  return {"train_wm", "run", seconds_since(start)};
}

StageInfo stage_retrieve(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                         json* report_out) {
  const auto start = Clock::now();
  const Paths paths = resolve_paths(cfg);
  CacheManifest cache(paths.out);
  const std::string stage = "retrieve/seed_" + std::to_string(seed);
  const std::string key = hash_hex(fnv1a(json{{"retrieval", cfg.to_json().at("retrieval")},
                                              {"wm", file_hash(paths.wm(seed))},
                                              {"expert", file_hash(paths.expert_data)},
                                              {"offline", file_hash(paths.offline_data)}}
                                             .dump()));
  if (use_cache &&
      cache.fresh(stage, key, {paths.retrieved(seed), paths.search_report(seed)})) {
    if (report_out != nullptr) {
      *report_out = read_json_file(paths.search_report(seed));
    }
    return {"retrieve", "cached", seconds_since(start)};
  }
  const Dataset expert = load_dataset(paths.expert_data);
  const Dataset offline = load_dataset(paths.offline_data);
  const WorldModel wm = load_world_model(paths.wm(seed));
  SearchReport report;
  const RetrievedSet retrieved = run_retrieval(expert, offline, wm, cfg.retrieval, &report);
  save_retrieved(retrieved, paths.retrieved(seed));
  write_json_file(paths.search_report(seed), report.to_json());
  if (report_out != nullptr) {
    *report_out = report.to_json();
  }
  cache.update(stage, key, {paths.retrieved(seed), paths.search_report(seed)});
  log_info("retrieve: " + std::to_string(retrieved.total()) + " samples over " +
           std::to_string(cfg.retrieval.steps) + " steps");
  return {"retrieve", "run", seconds_since(start)};
}

StageInfo stage_train_policy(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                             std::vector<double>* epoch_loss) {
  const auto start = Clock::now();
  const Paths paths = resolve_paths(cfg);
  CacheManifest cache(paths.out);
  const std::string stage = "policy/seed_" + std::to_string(seed);
  BcConfig bc_cfg = cfg.bc;
  bc_cfg.mode = cfg.mode;
  bc_cfg.seed = derive_seed(seed, "policy");

  json key_json{{"bc", cfg.to_json().at("bc")},
                {"mode", to_string(cfg.mode)},
                {"seed", bc_cfg.seed},
                {"expert", file_hash(paths.expert_data)}};
  if (cfg.mode == BcMode::Sbr) {
    key_json["retrieved"] = file_hash(paths.retrieved(seed));
  } else if (cfg.mode == BcMode::BcAll) {
    key_json["offline"] = file_hash(paths.offline_data);
  }
  const std::string key = hash_hex(fnv1a(key_json.dump()));
  if (use_cache && cache.fresh(stage, key, {paths.policy(seed)})) {
    return {"train_policy", "cached", seconds_since(start)};
  }

  const Dataset expert = load_dataset(paths.expert_data);
  const Dataset offline = load_dataset(paths.offline_data);
  const NormStats norm = compute_norm_stats({&expert, &offline});

  RetrievedSet retrieved;
  const RetrievedSet* retrieved_ptr = nullptr;
  if (cfg.mode == BcMode::Sbr) {
    retrieved = load_retrieved(paths.retrieved(seed));
    retrieved_ptr = &retrieved;
  }
  auto [policy, log] =
      train_policy(expert, retrieved_ptr, cfg.mode == BcMode::BcAll ? &offline : nullptr,
                   norm, bc_cfg);
  fs::create_directories(paths.seed_dir(seed));
  save_policy(policy, paths.policy(seed), bc_cfg.seed);
  if (epoch_loss != nullptr) {
    *epoch_loss = log.epoch_loss;
  }
  cache.update(stage, key, {paths.policy(seed)});
  return {"train_policy", "run", seconds_since(start)};
}

StageInfo stage_eval(const PipelineConfig& cfg, std::uint64_t seed, bool use_cache,
                     EvalReport* report_out, double* norm_score_out) {
  const auto start = Clock::now();
  const Paths paths = resolve_paths(cfg);
  CacheManifest cache(paths.out);
  const std::string stage = "eval/seed_" + std::to_string(seed);
  EvalConfig eval_cfg = cfg.eval;
  eval_cfg.seed = derive_seed(seed, "eval");
  const std::string key = hash_hex(fnv1a(json{{"eval", cfg.to_json().at("eval")},
                                              {"seed", eval_cfg.seed},
                                              {"layout", cfg.layout},
                                              {"noise_dims", cfg.data.noise_dims},
                                              {"policy", file_hash(paths.policy(seed))}}
                                             .dump()));
  const auto read_back = [&]() {
    const json j = read_json_file(paths.eval(seed));
    if (report_out != nullptr) {
      report_out->mean_return = j.at("mean_return");
      report_out->std_return = j.at("std_return");
      report_out->mean_discounted = j.at("mean_discounted");
      report_out->success_rate = j.at("success_rate");
      report_out->episodes = j.at("episodes");
    }
    if (norm_score_out != nullptr) {
      *norm_score_out = j.at("norm_score");
    }
  };
  if (use_cache && cache.fresh(stage, key, {paths.eval(seed)})) {
    read_back();
    return {"eval", "cached", seconds_since(start)};
  }
  const Policy policy = load_policy(paths.policy(seed));
  const ReferenceReturns refs = load_or_compute_refs(cfg, paths);
  const EvalReport report = evaluate_policy(policy, env_spec(cfg), eval_cfg);
  const double score =
      normalized_score(report.mean_return, refs.random_return, refs.expert_return);
  json j = report.to_json();
  j["norm_score"] = score;
  write_json_file(paths.eval(seed), j);
  if (report_out != nullptr) {
    *report_out = report;
  }
  if (norm_score_out != nullptr) {
    *norm_score_out = score;
  }
  cache.update(stage, key, {paths.eval(seed)});
  return {"eval", "run", seconds_since(start)};
}

json RunRecord::to_json() const {
  json runs_json = json::array();
  for (const auto& r : runs) {
    json stages = json::array();
    for (const auto& s : r.stages) {
      stages.push_back({{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}});
    }
    json artifacts = json::object();
    for (const auto& [name, hash] : r.artifact_hashes) {
      artifacts[name] = hash;
    }
    json eval_json = r.eval.to_json();
    eval_json["norm_score"] = r.norm_score;
    runs_json.push_back({{"seed", r.seed},
                         {"stages", stages},
                         {"wm_epoch_loss", r.wm_epoch_loss},
                         {"search_report", r.search_report},
                         {"bc_epoch_loss", r.bc_epoch_loss},
                         {"eval", eval_json},
                         {"artifacts", artifacts}});
  }
  return {{"config", config},
          {"data", data_summary},
          {"reference",
           {{"random_return", reference.random_return},
            {"expert_return", reference.expert_return}}},
          {"runs", runs_json}};
}

namespace {

void strip_timings(json& j) {
  if (j.is_object()) {
    j.erase("seconds");
    for (auto& [key, value] : j.items()) {
      strip_timings(value);
    }
  } else if (j.is_array()) {
    for (auto& item : j) {
      strip_timings(item);
    }
  }
}

}  // namespace

json RunRecord::to_comparable_json() const {
  json j = to_json();
  strip_timings(j);
  return j;
}

RunRecord run_pipeline(const PipelineConfig& cfg, bool use_cache) {
  cfg.validate();
  const Paths paths = resolve_paths(cfg);
  fs::create_directories(paths.out);

  stage_gen_data(cfg, use_cache);
  const Dataset expert = load_dataset(paths.expert_data);
  const Dataset offline = load_dataset(paths.offline_data);

  RunRecord record;
  record.config = cfg.to_json();
  record.data_summary = {{"expert_trajectories", expert.size()},
                         {"offline_trajectories", offline.size()},
                         {"expert_transitions", expert.transition_count()},
                         {"offline_transitions", offline.transition_count()},
                         {"expert_hash", file_hash(paths.expert_data)},
                         {"offline_hash", file_hash(paths.offline_data)}};
  record.reference = load_or_compute_refs(cfg, paths);

  const bool needs_retrieval = cfg.mode == BcMode::Sbr;
  for (const std::uint64_t seed : cfg.seeds) {
    SeedRunRecord run;
    run.seed = seed;
    if (needs_retrieval) {
      run.stages.push_back(stage_train_wm(cfg, seed, use_cache, &run.wm_epoch_loss));
      run.stages.push_back(stage_retrieve(cfg, seed, use_cache, &run.search_report));
      run.artifact_hashes["wm.ckpt"] = file_hash(paths.wm(seed));
      run.artifact_hashes["retrieved.jsonl"] = file_hash(paths.retrieved(seed));
    } else {
      run.stages.push_back({"train_wm", "skipped", 0.0});
      run.stages.push_back({"retrieve", "skipped", 0.0});
      run.search_report = nullptr;
    }
    run.stages.push_back(stage_train_policy(cfg, seed, use_cache, &run.bc_epoch_loss));
    run.artifact_hashes["policy.ckpt"] = file_hash(paths.policy(seed));
    run.stages.push_back(stage_eval(cfg, seed, use_cache, &run.eval, &run.norm_score));
    record.runs.push_back(std::move(run));
    log_info("seed " + std::to_string(seed) + " [" + to_string(cfg.mode) +
             "]: return " + std::to_string(record.runs.back().eval.mean_return) +
             ", norm score " + std::to_string(record.runs.back().norm_score));
  }

  write_json_file(paths.out / "run_record.json", record.to_json());
  return record;
}

void export_embeddings_cmd(const PipelineConfig& cfg, std::uint64_t seed,
                           const fs::path& out_csv) {
  const Paths paths = resolve_paths(cfg);
  const WorldModel wm = load_world_model(paths.wm(seed));
  const Dataset expert = load_dataset(paths.expert_data);
  const Dataset offline = load_dataset(paths.offline_data);
  Dataset merged;
  for (const auto& t : expert.trajectories()) {
    merged.add(t);
  }
  for (const auto& t : offline.trajectories()) {
    merged.add(t);
  }
  export_embeddings(wm, merged, out_csv);
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  const json j = read_json_file(path);
  check_keys(j, {"layouts", "modes", "seeds", "out_dir", "base"}, "experiment");
  ExperimentConfig cfg;
  cfg.layouts = j.at("layouts").get<std::vector<std::string>>();
  cfg.modes = j.at("modes").get<std::vector<std::string>>();
  cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.out_dir = j.at("out_dir").get<std::string>();
  json base = j.value("base", json::object());
  if (!base.contains("out_dir")) {
    base["out_dir"] = cfg.out_dir;  // placeholder; overridden per cell
  }
  cfg.base = PipelineConfig::from_json(base);
  if (cfg.layouts.empty() || cfg.modes.empty() || cfg.seeds.empty()) {
    throw ConfigError("experiment matrix must have layouts, modes, and seeds");
  }
  return cfg;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::vector<ExperimentCell> run_experiment(const ExperimentConfig& cfg, bool use_cache) {
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  std::vector<ExperimentCell> cells;

  for (const auto& layout : cfg.layouts) {
    // Generate (or reuse) the layout's dataset once, shared across modes.
    PipelineConfig data_cfg = cfg.base;
    data_cfg.layout = layout;
    data_cfg.out_dir = (out / layout).string();
    stage_gen_data(data_cfg, use_cache);
    const Paths data_paths = resolve_paths(data_cfg);

    for (const auto& mode : cfg.modes) {
      ExperimentCell cell;
      cell.layout = layout;
      cell.mode = mode;
      try {
        PipelineConfig cell_cfg = cfg.base;
        cell_cfg.layout = layout;
        cell_cfg.mode = bc_mode_from_string(mode);
        cell_cfg.bc.mode = cell_cfg.mode;
        cell_cfg.seeds = cfg.seeds;
        cell_cfg.out_dir = (out / layout / mode).string();
        cell_cfg.data.expert_path = data_paths.expert_data.string();
        cell_cfg.data.offline_path = data_paths.offline_data.string();
        cell.record = run_pipeline(cell_cfg, use_cache);
        cell.status = "ok";
      } catch (const std::exception& e) {
        cell.status = "error";
        cell.error = e.what();
        log_error("cell " + layout + "/" + mode + " failed: " + cell.error);
      }
      cells.push_back(std::move(cell));
    }
  }

  // results.csv: one row per cell-seed, then one aggregate row per cell.
  std::ofstream csv(out / "results.csv");
  csv << "mode,layout,seed,return,disc_return,norm_score,success_rate\n";
  for (const auto& cell : cells) {
    if (cell.status != "ok") {
      continue;
    }
    std::vector<double> returns, discs, scores, succ;
    for (const auto& run : cell.record.runs) {
      csv << cell.mode << "," << cell.layout << "," << run.seed << ","
          << fmt(run.eval.mean_return) << "," << fmt(run.eval.mean_discounted) << ","
          << fmt(run.norm_score) << "," << fmt(run.eval.success_rate) << "\n";
      returns.push_back(run.eval.mean_return);
      discs.push_back(run.eval.mean_discounted);
      scores.push_back(run.norm_score);
      succ.push_back(run.eval.success_rate);
    }
    const auto agg = [](const std::vector<double>& v) {
      double mean = 0.0;
      for (const double x : v) {
        mean += x / static_cast<double>(v.size());
      }
      double var = 0.0;
      for (const double x : v) {
        var += (x - mean) * (x - mean) / static_cast<double>(v.size());
      }
      return fmt(mean) + "±" + fmt(std::sqrt(var));
    };
    csv << cell.mode << "," << cell.layout << ",aggregate," << agg(returns) << ","
        << agg(discs) << "," << agg(scores) << "," << agg(succ) << "\n";
  }
  csv.close();

  json cells_json = json::array();
  for (const auto& cell : cells) {
    json c{{"layout", cell.layout}, {"mode", cell.mode}, {"status", cell.status}};
    if (cell.status == "ok") {
      c["record"] = cell.record.to_json();
    } else {
      c["error"] = cell.error;
    }
    cells_json.push_back(std::move(c));
  }
  write_json_file(out / "experiment.json",
                  json{{"layouts", cfg.layouts},
                       {"modes", cfg.modes},
                       {"seeds", cfg.seeds},
                       {"cells", cells_json}});
  return cells;
}

}  // namespace sbr
