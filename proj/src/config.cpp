#include "voxelformer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace vxf {

void TrainConfig::validate() const {
  model.validate();
  require(optim.lr > 0.0, "config: lr must be positive");
  require(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 &&
              optim.beta2 < 1.0,
          "config: betas must lie in [0,1)");
  require(optim.eps > 0.0, "config: adam eps must be positive");
  require(optim.weight_decay >= 0.0, "config: weight_decay must be >= 0");
  require(epochs >= 1, "config: epochs must be >= 1");
  require(batch_size >= 1, "config: batch_size must be >= 1");
  require(lambda_mse > 0.0 && lambda_contrastive > 0.0,
          "config: loss weights must be positive");
  require(tau > 0.0, "config: tau must be positive");
  require(mixup_alpha > 0.0, "config: mixup_alpha must be positive");
  require(!dataset_dir.empty(), "config: dataset_dir must be set");
}

void TrainConfig::validate_against(const Dataset& ds) const {
  require(ds.config.target_dim == model.target_flat_dim(),
          "config: dataset target dim " + std::to_string(ds.config.target_dim) +
              " does not match model target_tokens*target_dim " +
              std::to_string(model.target_flat_dim()));
  const int64_t n_min = ds.min_voxel_count();
  const int64_t budget = model.merges_per_stage * model.stages;
  require(n_min - budget >= 2 * model.merges_per_stage,
          "config: merge schedule infeasible, min voxel count " +
              std::to_string(n_min) + " needs N - M*L >= 2M with M=" +
              std::to_string(model.merges_per_stage) + " L=" +
              std::to_string(model.stages));
}

namespace {

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    require(pos == v.size(), "config: bad integer for " + key + ": " + v);
    return r;
  } catch (const validation_error&) {
    throw;
  } catch (...) {
    fail("config: bad integer for " + key + ": " + v);
  }
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  require(end == v.c_str() + v.size() && !v.empty(),
          "config: bad number for " + key + ": " + v);
  return r;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: bad boolean for " + key + ": " + v);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"dim", {[](const TrainConfig& c) { return std::to_string(c.model.dim); },
               [](TrainConfig& c, const std::string& v) { c.model.dim = to_int("dim", v); }}},
      {"heads", {[](const TrainConfig& c) { return std::to_string(c.model.heads); },
                 [](TrainConfig& c, const std::string& v) { c.model.heads = to_int("heads", v); }}},
      {"stages", {[](const TrainConfig& c) { return std::to_string(c.model.stages); },
                  [](TrainConfig& c, const std::string& v) { c.model.stages = to_int("stages", v); }}},
      {"merges_per_stage",
       {[](const TrainConfig& c) { return std::to_string(c.model.merges_per_stage); },
        [](TrainConfig& c, const std::string& v) { c.model.merges_per_stage = to_int("merges_per_stage", v); }}},
      {"queries", {[](const TrainConfig& c) { return std::to_string(c.model.queries); },
                   [](TrainConfig& c, const std::string& v) { c.model.queries = to_int("queries", v); }}},
      {"qformer_layers",
       {[](const TrainConfig& c) { return std::to_string(c.model.qformer_layers); },
        [](TrainConfig& c, const std::string& v) { c.model.qformer_layers = to_int("qformer_layers", v); }}},
      {"prior_layers",
       {[](const TrainConfig& c) { return std::to_string(c.model.prior_layers); },
        [](TrainConfig& c, const std::string& v) { c.model.prior_layers = to_int("prior_layers", v); }}},
      {"retrieval_dim",
       {[](const TrainConfig& c) { return std::to_string(c.model.retrieval_dim); },
        [](TrainConfig& c, const std::string& v) { c.model.retrieval_dim = to_int("retrieval_dim", v); }}},
      {"target_tokens",
       {[](const TrainConfig& c) { return std::to_string(c.model.target_tokens); },
        [](TrainConfig& c, const std::string& v) { c.model.target_tokens = to_int("target_tokens", v); }}},
      {"target_dim",
       {[](const TrainConfig& c) { return std::to_string(c.model.target_dim); },
        [](TrainConfig& c, const std::string& v) {
          c.model.target_dim = to_int("target_dim", v);
          c.data.target_dim = c.model.target_tokens * c.model.target_dim;
        }}},
      {"ffn_mult", {[](const TrainConfig& c) { return std::to_string(c.model.ffn_mult); },
                    [](TrainConfig& c, const std::string& v) { c.model.ffn_mult = to_int("ffn_mult", v); }}},
      {"projector_hidden",
       {[](const TrainConfig& c) { return std::to_string(c.model.projector_hidden); },
        [](TrainConfig& c, const std::string& v) { c.model.projector_hidden = to_int("projector_hidden", v); }}},
      {"pe_hidden", {[](const TrainConfig& c) { return std::to_string(c.model.pe_hidden); },
                     [](TrainConfig& c, const std::string& v) { c.model.pe_hidden = to_int("pe_hidden", v); }}},
      {"pe_omega0", {[](const TrainConfig& c) { return fmt_double(c.model.pe_omega0); },
                     [](TrainConfig& c, const std::string& v) { c.model.pe_omega0 = to_double("pe_omega0", v); }}},
      {"pe_mode",
       {[](const TrainConfig& c) {
          return c.model.pe_mode == PeMode::Siren ? std::string("siren")
                                                  : std::string("fixed");
        },
        [](TrainConfig& c, const std::string& v) {
          if (v == "siren") c.model.pe_mode = PeMode::Siren;
          else if (v == "fixed") c.model.pe_mode = PeMode::Fixed;
          else fail("config: pe_mode must be siren or fixed, got " + v);
        }}},
      {"pe_trainable",
       {[](const TrainConfig& c) { return c.model.pe_trainable ? std::string("true") : std::string("false"); },
        [](TrainConfig& c, const std::string& v) { c.model.pe_trainable = to_bool("pe_trainable", v); }}},
      {"merge_metric",
       {[](const TrainConfig& c) {
          return c.model.merge_metric == MergeMetric::Attention
                     ? std::string("attention")
                     : std::string("key_cosine");
        },
        [](TrainConfig& c, const std::string& v) {
          if (v == "attention") c.model.merge_metric = MergeMetric::Attention;
          else if (v == "key_cosine") c.model.merge_metric = MergeMetric::KeyCosine;
          else fail("config: merge_metric must be attention or key_cosine, got " + v);
        }}},
      {"lr", {[](const TrainConfig& c) { return fmt_double(c.optim.lr); },
              [](TrainConfig& c, const std::string& v) { c.optim.lr = to_double("lr", v); }}},
      {"beta1", {[](const TrainConfig& c) { return fmt_double(c.optim.beta1); },
                 [](TrainConfig& c, const std::string& v) { c.optim.beta1 = to_double("beta1", v); }}},
      {"beta2", {[](const TrainConfig& c) { return fmt_double(c.optim.beta2); },
                 [](TrainConfig& c, const std::string& v) { c.optim.beta2 = to_double("beta2", v); }}},
      {"adam_eps", {[](const TrainConfig& c) { return fmt_double(c.optim.eps); },
                    [](TrainConfig& c, const std::string& v) { c.optim.eps = to_double("adam_eps", v); }}},
      {"weight_decay",
       {[](const TrainConfig& c) { return fmt_double(c.optim.weight_decay); },
        [](TrainConfig& c, const std::string& v) { c.optim.weight_decay = to_double("weight_decay", v); }}},
      {"epochs", {[](const TrainConfig& c) { return std::to_string(c.epochs); },
                  [](TrainConfig& c, const std::string& v) { c.epochs = to_int("epochs", v); }}},
      {"batch_size", {[](const TrainConfig& c) { return std::to_string(c.batch_size); },
                      [](TrainConfig& c, const std::string& v) { c.batch_size = to_int("batch_size", v); }}},
      {"lambda_mse", {[](const TrainConfig& c) { return fmt_double(c.lambda_mse); },
                      [](TrainConfig& c, const std::string& v) { c.lambda_mse = to_double("lambda_mse", v); }}},
      {"lambda_contrastive",
       {[](const TrainConfig& c) { return fmt_double(c.lambda_contrastive); },
        [](TrainConfig& c, const std::string& v) { c.lambda_contrastive = to_double("lambda_contrastive", v); }}},
      {"tau", {[](const TrainConfig& c) { return fmt_double(c.tau); },
               [](TrainConfig& c, const std::string& v) { c.tau = to_double("tau", v); }}},
      {"mixup_alpha", {[](const TrainConfig& c) { return fmt_double(c.mixup_alpha); },
                       [](TrainConfig& c, const std::string& v) { c.mixup_alpha = to_double("mixup_alpha", v); }}},
      {"seed", {[](const TrainConfig& c) { return std::to_string(c.seed); },
                [](TrainConfig& c, const std::string& v) { c.seed = static_cast<uint64_t>(to_int("seed", v)); }}},
      {"dataset_dir", {[](const TrainConfig& c) { return c.dataset_dir; },
                       [](TrainConfig& c, const std::string& v) { c.dataset_dir = v; }}},
      {"checkpoint_path", {[](const TrainConfig& c) { return c.checkpoint_path; },
                           [](TrainConfig& c, const std::string& v) { c.checkpoint_path = v; }}},
      {"metrics_path", {[](const TrainConfig& c) { return c.metrics_path; },
                        [](TrainConfig& c, const std::string& v) { c.metrics_path = v; }}},
      {"subjects", {[](const TrainConfig& c) { return std::to_string(c.data.subjects); },
                    [](TrainConfig& c, const std::string& v) { c.data.subjects = to_int("subjects", v); }}},
      {"train_stimuli", {[](const TrainConfig& c) { return std::to_string(c.data.train_stimuli); },
                         [](TrainConfig& c, const std::string& v) { c.data.train_stimuli = to_int("train_stimuli", v); }}},
      {"test_stimuli", {[](const TrainConfig& c) { return std::to_string(c.data.test_stimuli); },
                        [](TrainConfig& c, const std::string& v) { c.data.test_stimuli = to_int("test_stimuli", v); }}},
      {"voxel_counts",
       {[](const TrainConfig& c) {
          std::string s;
          for (size_t i = 0; i < c.data.voxel_counts.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(c.data.voxel_counts[i]);
          }
          return s;
        },
        [](TrainConfig& c, const std::string& v) {
          c.data.voxel_counts.clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ','))
            c.data.voxel_counts.push_back(to_int("voxel_counts", item));
          require(!c.data.voxel_counts.empty(),
                  "config: voxel_counts must list at least one count");
        }}},
      {"noise_sigma", {[](const TrainConfig& c) { return fmt_double(c.data.noise_sigma); },
                       [](TrainConfig& c, const std::string& v) { c.data.noise_sigma = to_double("noise_sigma", v); }}},
  };
  return table;
}

}  // namespace

void apply_override(TrainConfig& cfg, const std::string& key,
                    const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(cfg, value);
      if (key == "seed") cfg.data.seed = cfg.seed;
      return;
    }
  }
  fail("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(lineno) + " is not key = value");
    apply_override(cfg, trim(stripped.substr(0, eq)),
                   trim(stripped.substr(eq + 1)));
  }
  cfg.data.seed = cfg.seed;
  cfg.data.target_dim = cfg.model.target_flat_dim();
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [name, field] : fields())
    os << name << " = " << field.get(cfg) << "\n";
  return os.str();
}

}  // namespace vxf
