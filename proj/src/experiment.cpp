#include "missmod/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "missmod/checkpoint.hpp"
#include "missmod/errors.hpp"

namespace missmod {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config schema

namespace {

struct Field {
  std::string key;
  std::string type;
  std::string help;
  bool hashed;
  std::function<void(ExperimentConfig&, const json&)> set;
  std::function<json(const ExperimentConfig&)> get;
};

template <typename T>
T as(const json& v) {
  return v.get<T>();
}

std::size_t as_count(const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_number(const json& v) {
  if (!v.is_number()) throw ConfigError("expected a number");
  return v.get<double>();
}

bool as_bool(const json& v) {
  if (!v.is_boolean()) throw ConfigError("expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v) {
  if (!v.is_string()) throw ConfigError("expected a string");
  return v.get<std::string>();
}

std::vector<MissingPattern> as_patterns(const json& v) {
  if (v.is_string() && v.get<std::string>() == "grid") return {};
  if (!v.is_array()) throw ConfigError("expected a list of \"m1/m2\" percentage labels or \"grid\"");
  std::vector<MissingPattern> out;
  for (const auto& item : v) out.push_back(parse_pattern_label(as_string(item)));
  return out;
}

json pattern_labels(const std::vector<MissingPattern>& patterns) {
  json arr = json::array();
  for (const auto& p : patterns) arr.push_back(p.label());
  return arr;
}

#define MM_COUNT(KEY, EXPR, HELP, HASHED) \
  Field{KEY, "integer", HELP, HASHED, [](ExperimentConfig& c, const json& v) { EXPR = as_count(v); }, \
        [](const ExperimentConfig& c) { return json(EXPR); }}
#define MM_NUMBER(KEY, EXPR, HELP) \
  Field{KEY, "number", HELP, true, [](ExperimentConfig& c, const json& v) { EXPR = as_number(v); }, \
        [](const ExperimentConfig& c) { return json(EXPR); }}
#define MM_BOOL(KEY, EXPR, HELP, HASHED) \
  Field{KEY, "bool", HELP, HASHED, [](ExperimentConfig& c, const json& v) { EXPR = as_bool(v); }, \
        [](const ExperimentConfig& c) { return json(EXPR); }}
#define MM_ENUM(KEY, EXPR, PARSE, HELP) \
  Field{KEY, "string", HELP, true, [](ExperimentConfig& c, const json& v) { EXPR = PARSE(as_string(v)); }, \
        [](const ExperimentConfig& c) { return json(std::string(to_string(EXPR))); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MM_COUNT("task.n_samples", c.task.n_samples, "samples generated before the train/test split", true),
      MM_COUNT("task.n_classes", c.task.n_classes, "classes (labels for multilabel tasks)", true),
      MM_COUNT("task.latent_dim", c.task.latent_dim, "dimension of the shared latent", true),
      MM_COUNT("task.seq_len_m1", c.task.seq_len[0], "tokens per m1 sequence", true),
      MM_COUNT("task.seq_len_m2", c.task.seq_len[1], "tokens per m2 sequence", true),
      MM_COUNT("task.vocab_m1", c.task.vocab_size[0], "m1 vocabulary size", true),
      MM_COUNT("task.vocab_m2", c.task.vocab_size[1], "m2 vocabulary size", true),
      MM_NUMBER("task.noise", c.task.noise, "within-class latent spread"),
      MM_NUMBER("task.view_noise_m1", c.task.view_noise[0], "m1 view noise relative to task.noise"),
      MM_NUMBER("task.view_noise_m2", c.task.view_noise[1], "m2 view noise relative to task.noise"),
      MM_ENUM("task.kind", c.task.task_kind, parse_task_kind, "multiclass | multilabel | binary"),
      MM_COUNT("task.seed", c.task.seed, "seed of the generated dataset and its train/test split", true),
      MM_NUMBER("task.test_fraction", c.test_fraction, "held-out share of the dataset"),
      MM_COUNT("encoder.depth", c.encoder.depth, "transformer blocks", true),
      MM_COUNT("encoder.width", c.encoder.width, "embedding width", true),
      MM_COUNT("encoder.heads", c.encoder.heads, "attention heads", true),
      MM_COUNT("encoder.max_len", c.encoder.max_len, "longest accepted input sequence", true),
      MM_COUNT("encoder.prompt_len", c.encoder.prompt_len, "read-only prompts per modality (0 = CLS predictor)", true),
      Field{"encoder.prompt_self_attention", "string", "all | diagonal", true,
            [](ExperimentConfig& c, const json& v) {
              const auto s = as_string(v);
              if (s == "all") c.encoder.prompt_attention = PromptAttention::all;
              else if (s == "diagonal") c.encoder.prompt_attention = PromptAttention::diagonal;
              else throw ConfigError("expected all or diagonal");
            },
            [](const ExperimentConfig& c) {
              return json(c.encoder.prompt_attention == PromptAttention::all ? "all" : "diagonal");
            }},
      MM_BOOL("encoder.read_only_mask", c.encoder.read_only_prompts, "mask inputs from prompts", true),
      MM_BOOL("pretrain.enabled", c.pretrain.enabled, "warm-start encoders before the multimodal phase", true),
      MM_COUNT("pretrain.samples", c.pretrain.samples, "samples in the warm-start corpus", true),
      MM_COUNT("pretrain.epochs", c.pretrain.epochs, "warm-start epochs", true),
      MM_COUNT("pretrain.batch_size", c.pretrain.batch_size, "warm-start batch size", true),
      MM_NUMBER("pretrain.lr", c.pretrain.lr, "warm-start learning rate"),
      MM_ENUM("pretrain.objective", c.pretrain.objective, parse_pretrain_objective,
              "proxy (latent sign-pattern labels) | task (the task's own labels)"),
      MM_COUNT("pretrain.proxy_bits", c.pretrain.proxy_bits, "latent directions for proxy labels", true),
      MM_ENUM("peft.kind", c.peft.kind, parse_peft_kind, "bitfit | ln_tuning | prefix | adapter | full | frozen"),
      MM_COUNT("peft.adapter_reduction", c.peft.adapter_reduction, "adapter bottleneck factor", true),
      MM_ENUM("peft.adapter_placement", c.peft.adapter_placement, parse_adapter_placement,
              "layerwise | first | last"),
      MM_COUNT("peft.prefix_len", c.peft.prefix_len, "prefix tokens for prefix tuning", true),
      MM_ENUM("predictor.source", c.predictor_source, parse_predictor_source, "prompts | cls | none"),
      MM_ENUM("predictor.pooling", c.pooling, parse_prompt_pooling, "mean | concat"),
      MM_NUMBER("loss.lambda", c.train.vicreg.lambda, "invariance weight"),
      MM_NUMBER("loss.mu", c.train.vicreg.mu, "variance weight"),
      MM_NUMBER("loss.nu", c.train.vicreg.nu, "covariance weight"),
      MM_NUMBER("loss.gamma", c.train.vicreg.gamma, "target standard deviation"),
      MM_NUMBER("loss.eps", c.train.vicreg.eps, "variance stabiliser"),
      MM_NUMBER("loss.alpha", c.train.alpha, "weight of the classification terms"),
      MM_BOOL("loss.prediction", c.train.prediction_loss, "train the predictor with the VICReg loss", true),
      MM_BOOL("vicreg.variance", c.train.vicreg_options.variance, "include the variance term", true),
      MM_BOOL("vicreg.covariance", c.train.vicreg_options.covariance, "include the covariance term", true),
      MM_BOOL("vicreg.stop_gradient", c.train.vicreg_options.stop_gradient_target, "no gradient into the target",
              true),
      MM_BOOL("aux.enabled", c.train.auxiliary_loss, "auxiliary loss on predicted features", true),
      MM_BOOL("aux.fused", c.train.aux_fused, "aux logits also add the available modality", true),
      MM_COUNT("train.epochs", c.train.epochs, "epochs", true),
      MM_COUNT("train.batch_size", c.train.batch_size, "mixed batch size", true),
      MM_NUMBER("train.lr", c.train.base_lr, "peak learning rate"),
      MM_NUMBER("train.weight_decay", c.train.weight_decay, "decoupled weight decay"),
      MM_NUMBER("train.warmup_fraction", c.train.warmup_fraction, "share of steps spent warming up"),
      Field{"patterns.train", "list", "training patterns as \"m1/m2\" presence percentages", true,
            [](ExperimentConfig& c, const json& v) {
              c.train_patterns = as_patterns(v);
              if (c.train_patterns.empty()) throw ConfigError("at least one training pattern is required");
            },
            [](const ExperimentConfig& c) { return pattern_labels(c.train_patterns); }},
      Field{"patterns.test", "list", "test patterns, or \"grid\" for the fixed three", true,
            [](ExperimentConfig& c, const json& v) { c.test_patterns = as_patterns(v); },
            [](const ExperimentConfig& c) {
              return c.test_patterns.empty() ? json("grid") : pattern_labels(c.test_patterns);
            }},
      MM_ENUM("eval.metric", c.metric, parse_metric_kind, "accuracy | f1_macro | auroc"),
      MM_BOOL("eval.compare_baseline", c.compare_baseline, "also train the unimodal baseline", true),
      Field{"run.seeds", "list", "run seeds", false,
            [](ExperimentConfig& c, const json& v) {
              if (!v.is_array() || v.empty()) throw ConfigError("expected a non-empty list of seeds");
              c.seeds.clear();
              for (const auto& s : v) c.seeds.push_back(as_count(s));
            },
            [](const ExperimentConfig& c) { return json(c.seeds); }},
      MM_COUNT("run.workers", c.workers, "parallel training jobs", false),
      Field{"output.dir", "string", "artifact directory", false,
            [](ExperimentConfig& c, const json& v) { c.output_dir = as_string(v); },
            [](const ExperimentConfig& c) { return json(c.output_dir); }},
      MM_BOOL("output.checkpoints", c.save_checkpoints, "write model checkpoints", false),
      MM_BOOL("output.embeddings", c.save_embeddings, "write true/predicted embedding dumps", false),
  };
  return table;
}

#undef MM_COUNT
#undef MM_NUMBER
#undef MM_BOOL
#undef MM_ENUM

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

std::size_t line_of_key(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

std::string at_line(std::size_t line) { return line ? "line " + std::to_string(line) + ": " : ""; }

void set_field(ExperimentConfig& cfg, const Field& field, const json& value) {
  try {
    field.set(cfg, value);
  } catch (const json::exception& e) {
    throw ConfigError("key '" + field.key + "' expects " + field.type);
  } catch (const Error& e) {
    throw ConfigError("key '" + field.key + "': " + e.what());
  }
}

}  // namespace

const std::vector<SchemaEntry>& experiment_schema() {
  static const std::vector<SchemaEntry> schema = [] {
    std::vector<SchemaEntry> out;
    for (const auto& f : fields()) out.push_back({f.key, f.type, f.help});
    return out;
  }();
  return schema;
}

void ExperimentConfig::validate() const {
  task.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("task.test_fraction must lie in (0, 1)");
  for (const auto& e : encoder_configs()) e.validate();
  for (std::size_t m = 0; m < 2; ++m) {
    if (task.seq_len[m] > encoder.max_len) {
      throw ConfigError("encoder.max_len is shorter than task.seq_len_m" + std::to_string(m + 1));
    }
  }
  pretrain.validate();
  train.validate();
  if (train_patterns.empty()) throw ConfigError("patterns.train is empty");
  for (const auto& p : train_patterns) p.validate();
  for (const auto& p : test_patterns) p.validate();
  if (seeds.empty()) throw ConfigError("run.seeds is empty");
  if (workers == 0) throw ConfigError("run.workers must be positive");
  if (metric == MetricKind::auroc && task.task_kind != TaskKind::binary) {
    throw ConfigError("eval.metric auroc requires task.kind binary");
  }
}

std::array<EncoderConfig, 2> ExperimentConfig::encoder_configs() const {
  std::array<EncoderConfig, 2> out{encoder, encoder};
  for (std::size_t m = 0; m < 2; ++m) out[m].vocab_size = task.vocab_size[m];
  return out;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig mc;
  mc.encoders = encoder_configs();
  mc.outputs = task.outputs();
  mc.peft = peft;
  mc.predictor_source = predictor_source;
  mc.pooling = pooling;
  return mc;
}

std::vector<MissingPattern> ExperimentConfig::effective_test_patterns() const {
  return test_patterns.empty() ? test_grid(train_patterns.front()) : test_patterns;
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::string what = e.what();
    const auto colon = what.find("parse error");
    throw ConfigError(at_line(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      (colon == std::string::npos ? what : what.substr(colon)));
  }
  if (!doc.is_object()) throw ConfigError("line 1: config must be a JSON object of dotted keys");
  ExperimentConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (!key.empty() && key.front() == '_') continue;  // annotations such as _config_hash
    const auto* field = find_field(key);
    if (!field) throw ConfigError(at_line(line_of_key(text, key)) + "unknown key '" + key + "'");
    try {
      set_field(cfg, *field, value);
    } catch (const ConfigError& e) {
      throw ConfigError(at_line(line_of_key(text, key)) + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_experiment_config(buf.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  const auto* field = find_field(key);
  if (!field) throw ConfigError("override: unknown key '" + key + "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare words are strings
  }
  set_field(cfg, *field, value);
}

namespace {

json config_json(const ExperimentConfig& cfg, bool hashed_only) {
  json j = json::object();
  for (const auto& f : fields()) {
    if (!hashed_only || f.hashed) j[f.key] = f.get(cfg);
  }
  return j;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(config_json(cfg, true).dump())); }

std::string to_json_text(const ExperimentConfig& cfg) {
  json j = config_json(cfg, false);
  j["_config_hash"] = config_hash(cfg);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Running

const SummaryRow& ExperimentResult::cell(const std::string& method, const std::string& train,
                                         const std::string& test) const {
  for (const auto& s : summary) {
    if (s.method == method && s.train_pattern == train && s.test_pattern == test) return s;
  }
  throw UsageError("no result cell " + method + " " + train + " -> " + test);
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
      return s.method == r.method && s.train_pattern == r.train_pattern && s.test_pattern == r.test_pattern &&
             s.metric == r.metric;
    });
    if (it == out.end()) {
      out.push_back({r.method, r.train_pattern, r.test_pattern, r.metric, 0.0, std::nullopt, 0});
      values.emplace_back();
      it = out.end() - 1;
    }
    values[static_cast<std::size_t>(it - out.begin())].push_back(r.value);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    out[i].mean = mean;
    out[i].count = v.size();
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      out[i].std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
  }
  return out;
}

namespace {

struct Job {
  std::size_t train_index;
  std::uint64_t seed;
  bool baseline;
};

struct JobOutput {
  std::vector<ResultRow> rows;
  RunDiagnostics diagnostics;
};

std::string file_tag(const MissingPattern& p) {
  auto label = p.label();
  std::replace(label.begin(), label.end(), '/', '-');
  return label;
}

void write_history(const fs::path& path, const std::string& hash, const Job& job, const std::string& method,
                   const std::string& train_label, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "seed,config_hash,method,train_pattern,step,epoch,lr,n_complete,n_m1_only,n_m2_only,"
         "s,v,c,l_prd,l_cls_m1,l_cls_m2,l_cls_joint,l_aux,l_total\n";
  for (const auto& r : result.history) {
    const auto& l = r.loss;
    out << job.seed << ',' << hash << ',' << method << ',' << train_label << ',' << r.step << ',' << r.epoch << ','
        << r.lr << ',' << r.n_complete << ',' << r.n_m1_only << ',' << r.n_m2_only << ',' << l.s << ',' << l.v << ','
        << l.c << ',' << l.l_prd << ',' << l.l_cls_m1 << ',' << l.l_cls_m2 << ',' << l.l_cls_joint << ',' << l.l_aux
        << ',' << l.l_total << '\n';
  }
}

void write_embeddings(const fs::path& path, const std::string& hash, std::uint64_t seed,
                      const std::array<PredictionPair, 2>& pairs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  const auto width = std::max(pairs[0].truth.cols(), pairs[1].truth.cols());
  out << "seed,config_hash,id,direction,kind";
  for (std::size_t j = 0; j < width; ++j) out << ",e" << j;
  out << '\n';
  const char* directions[2] = {"m1_to_m2", "m2_to_m1"};
  for (std::size_t d = 0; d < 2; ++d) {
    const auto& pair = pairs[d];
    for (const auto* kind : {"true", "predicted"}) {
      const auto& t = std::string(kind) == "true" ? pair.truth : pair.predicted;
      const auto values = t.data();
      const auto w = t.cols();
      for (std::size_t i = 0; i < pair.ids.size(); ++i) {
        out << seed << ',' << hash << ',' << pair.ids[i] << ',' << directions[d] << ',' << kind;
        for (std::size_t j = 0; j < width; ++j) {
          out << ',';
          if (j < w) out << values[i * w + j];
        }
        out << '\n';
      }
    }
  }
}

double encoder_trainable_percent(const MultimodalModel& model) {
  std::size_t total = 0, trained = 0;
  for (const auto& p : model.parameters()) {
    if (p.name.rfind("encoder_", 0) != 0) continue;
    total += p.tensor.numel();
    if (model.trainable().contains(p.name)) trained += p.tensor.numel();
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(trained) / static_cast<double>(total);
}

JobOutput run_job(const ExperimentConfig& cfg, const TrainTestSplit& data, const Job& job, const std::string& hash,
                  const std::optional<fs::path>& out) {
  const auto& tp = cfg.train_patterns[job.train_index];
  const std::string method = job.baseline ? kBaselineName : kMethodName;
  auto mc = cfg.model_config();
  if (job.baseline) mc.predictor_source = PredictorSource::none;

  auto rng = make_rng(job.seed, "init");
  MultimodalModel model(mc, backbone_encoders(cfg.task, mc.encoders, cfg.pretrain), rng);
  auto tc = cfg.train;
  tc.seed = job.seed;
  const auto split = apply_pattern(data.train, tp, job.seed);
  const auto history = train(model, split, tc);

  JobOutput result;
  const auto mode = job.baseline ? InferenceMode::unimodal_baseline : InferenceMode::with_predictor;
  for (const auto& test : cfg.effective_test_patterns()) {
    result.rows.push_back({job.seed, method, tp.label(), test.label(), std::string(to_string(cfg.metric)),
                           evaluate(model, data.test, test, job.seed, cfg.metric, mode)});
  }
  auto& diag = result.diagnostics;
  diag.seed = job.seed;
  diag.method = method;
  diag.train_pattern = tp.label();
  diag.trainable_fraction = encoder_trainable_percent(model) / 100.0;
  diag.final_loss = history.history.empty() ? 0.0 : history.history.back().loss.l_total;

  std::optional<std::array<PredictionPair, 2>> pairs;
  if (model.has_predictor()) {
    pairs = std::array<PredictionPair, 2>{predict_embeddings(model, data.test, Modality::m1),
                                          predict_embeddings(model, data.test, Modality::m2)};
    diag.m1_to_m2 = diagnose((*pairs)[0]);
    diag.m2_to_m1 = diagnose((*pairs)[1]);
  }

  if (out) {
    const auto stem = method + "_" + file_tag(tp) + "_seed" + std::to_string(job.seed);
    write_history(*out / "history" / (stem + ".csv"), hash, job, method, tp.label(), history);
    if (cfg.save_checkpoints) {
      json meta = {{"seed", job.seed}, {"config_hash", hash}, {"method", method}, {"train_pattern", tp.label()}};
      save_checkpoint(*out / "checkpoints" / (stem + ".ckpt"), model.parameters(), meta.dump());
    }
    if (cfg.save_embeddings && pairs) {
      write_embeddings(*out / "embeddings" / (stem + ".csv"), hash, job.seed, *pairs);
    }
  }
  return result;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& out) {
  cfg.validate();
  const auto hash = config_hash(cfg);
  if (out) {
    for (const char* sub : {"", "history", "checkpoints", "embeddings"}) ensure_dir(*out / sub);
  }

  const auto dataset = generate_dataset(cfg.task);
  const auto data = split_train_test(dataset, cfg.test_fraction, cfg.task.seed);
  // Warm the backbone cache once so workers do not race to build it.
  (void)backbone_encoders(cfg.task, cfg.encoder_configs(), cfg.pretrain);

  std::vector<Job> jobs;
  for (std::size_t t = 0; t < cfg.train_patterns.size(); ++t) {
    for (auto seed : cfg.seeds) {
      jobs.push_back({t, seed, false});
      if (cfg.compare_baseline) jobs.push_back({t, seed, true});
    }
  }

  std::vector<JobOutput> outputs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        outputs[i] = run_job(cfg, data, jobs[i], hash, out);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(cfg.workers, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentResult result;
  result.config_hash = hash;
  for (auto& o : outputs) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    result.diagnostics.push_back(std::move(o.diagnostics));
  }
  result.summary = summarize(result.rows);
  if (out) write_results(*out, cfg, result);
  return result;
}

namespace {

json diagnostics_json(const PredictionDiagnostics& d) { return {{"cosine", d.cosine}, {"min_std", d.min_std}}; }

json summary_json(const SummaryRow& s) {
  return {{"method", s.method}, {"train_pattern", s.train_pattern}, {"test_pattern", s.test_pattern},
          {"metric", s.metric}, {"mean", s.mean},   {"std", s.std ? json(*s.std) : json(nullptr)},
          {"count", s.count}};
}

std::string seed_list(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? ";" : "") + std::to_string(seeds[i]);
  return out;
}

}  // namespace

void write_results(const fs::path& dir, const ExperimentConfig& cfg, const ExperimentResult& result) {
  ensure_dir(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw IoError("cannot write " + (dir / name).string());
    f << std::setprecision(17);
    return f;
  };
  {
    auto f = open("effective_config.json");
    f << to_json_text(cfg);
  }
  {
    auto f = open("results.csv");
    f << "seed,method,train_pattern,test_pattern,metric,value,config_hash\n";
    for (const auto& r : result.rows) {
      f << r.seed << ',' << r.method << ',' << r.train_pattern << ',' << r.test_pattern << ',' << r.metric << ','
        << r.value << ',' << result.config_hash << '\n';
    }
  }
  {
    auto f = open("summary.csv");
    f << "method,train_pattern,test_pattern,metric,mean,std,count,seeds,config_hash\n";
    for (const auto& s : result.summary) {
      f << s.method << ',' << s.train_pattern << ',' << s.test_pattern << ',' << s.metric << ',' << s.mean << ',';
      if (s.std) f << *s.std;
      f << ',' << s.count << ',' << seed_list(cfg.seeds) << ',' << result.config_hash << '\n';
    }
  }
  json j;
  j["config_hash"] = result.config_hash;
  j["seeds"] = cfg.seeds;
  j["rows"] = json::array();
  for (const auto& r : result.rows) {
    j["rows"].push_back({{"seed", r.seed}, {"method", r.method}, {"train_pattern", r.train_pattern},
                         {"test_pattern", r.test_pattern}, {"metric", r.metric}, {"value", r.value}});
  }
  j["summary"] = json::array();
  for (const auto& s : result.summary) j["summary"].push_back(summary_json(s));
  j["diagnostics"] = json::array();
  for (const auto& d : result.diagnostics) {
    json e = {{"seed", d.seed},
              {"method", d.method},
              {"train_pattern", d.train_pattern},
              {"encoder_trainable_percent", 100.0 * d.trainable_fraction},
              {"final_loss", d.final_loss}};
    if (d.m1_to_m2) e["m1_to_m2"] = diagnostics_json(*d.m1_to_m2);
    if (d.m2_to_m1) e["m2_to_m1"] = diagnostics_json(*d.m2_to_m1);
    j["diagnostics"].push_back(e);
  }
  auto f = open("results.json");
  f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<std::string> ablation_dimensions() {
  return {"prompt_len", "masking", "peft", "vicreg_terms", "predictor_variant", "coefficients"};
}

std::vector<AblationVariant> ablation_grid(const std::string& dimension) {
  if (dimension == "prompt_len") {
    std::vector<AblationVariant> out;
    for (int n : {0, 1, 2, 6, 12}) {
      out.push_back({n == 0 ? "cls" : "prompts_" + std::to_string(n), {"encoder.prompt_len=" + std::to_string(n)}});
    }
    return out;
  }
  if (dimension == "masking") {
    return {{"masked", {"encoder.read_only_mask=true"}}, {"unmasked", {"encoder.read_only_mask=false"}}};
  }
  if (dimension == "peft") {
    return {{"bitfit", {"peft.kind=bitfit"}},
            {"ln_tuning", {"peft.kind=ln_tuning"}},
            {"prefix", {"peft.kind=prefix"}},
            {"adapter_first", {"peft.kind=adapter", "peft.adapter_placement=first"}},
            {"adapter_last", {"peft.kind=adapter", "peft.adapter_placement=last"}},
            {"adapter_layerwise", {"peft.kind=adapter", "peft.adapter_placement=layerwise"}}};
  }
  if (dimension == "vicreg_terms") {
    return {{"inv_stopgrad", {"vicreg.variance=false", "vicreg.covariance=false", "vicreg.stop_gradient=true"}},
            {"inv_only", {"vicreg.variance=false", "vicreg.covariance=false", "vicreg.stop_gradient=false"}},
            {"full", {"vicreg.variance=true", "vicreg.covariance=true", "vicreg.stop_gradient=false"}}};
  }
  if (dimension == "predictor_variant") {
    return {{"prompts_mean", {"predictor.source=prompts", "predictor.pooling=mean"}},
            {"prompts_concat", {"predictor.source=prompts", "predictor.pooling=concat"}},
            {"cls", {"predictor.source=cls"}}};
  }
  if (dimension == "coefficients") {
    std::vector<AblationVariant> out;
    for (int c : {5, 15, 25, 50}) {
      const auto n = std::to_string(c);
      out.push_back({n + "_" + n + "_1", {"loss.lambda=" + n, "loss.mu=" + n, "loss.nu=1"}});
    }
    return out;
  }
  std::string known;
  for (const auto& d : ablation_dimensions()) known += (known.empty() ? "" : ", ") + d;
  throw ConfigError("unknown ablation dimension '" + dimension + "' (expected one of " + known + ")");
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::string& dimension,
                                      const std::optional<fs::path>& out) {
  const auto grid = ablation_grid(dimension);
  std::vector<AblationRow> rows;
  std::vector<std::string> hashes;
  for (const auto& variant : grid) {
    auto cfg = base;
    for (const auto& o : variant.overrides) apply_override(cfg, o);
    cfg.compare_baseline = false;
    if (out) cfg.output_dir = (*out / variant.name).string();
    const auto result = run_experiment(cfg, out ? std::optional<fs::path>(*out / variant.name) : std::nullopt);
    double pct = 0.0;
    for (const auto& d : result.diagnostics) pct += 100.0 * d.trainable_fraction;
    pct /= static_cast<double>(std::max<std::size_t>(result.diagnostics.size(), 1));
    for (const auto& s : result.summary) {
      rows.push_back({variant.name, s, pct});
      hashes.push_back(result.config_hash);
    }
  }
  if (out) {
    std::ofstream f(*out / ("ablation_" + dimension + ".csv"));
    if (!f) throw IoError("cannot write ablation table in " + out->string());
    f << std::setprecision(17);
    f << "dimension,variant,method,train_pattern,test_pattern,metric,mean,std,count,encoder_trainable_percent,seeds,"
         "config_hash\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      f << dimension << ',' << r.variant << ',' << r.cell.method << ',' << r.cell.train_pattern << ','
        << r.cell.test_pattern << ',' << r.cell.metric << ',' << r.cell.mean << ',';
      if (r.cell.std) f << *r.cell.std;
      f << ',' << r.cell.count << ',' << r.trainable_percent << ',' << seed_list(base.seeds) << ',' << hashes[i]
        << '\n';
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report

namespace {

struct Entry {
  std::string source;  // sub-directory, empty for the top level
  SummaryRow row;
};

void collect_results(const fs::path& dir, const std::string& source, std::vector<Entry>& out) {
  const auto file = dir / "results.json";
  if (!fs::exists(file)) return;
  std::ifstream in(file);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(file.string() + " is not valid JSON");
  }
  for (const auto& s : j.at("summary")) {
    SummaryRow r;
    r.method = s.at("method").get<std::string>();
    r.train_pattern = s.at("train_pattern").get<std::string>();
    r.test_pattern = s.at("test_pattern").get<std::string>();
    r.metric = s.at("metric").get<std::string>();
    r.mean = s.at("mean").get<double>();
    if (!s.at("std").is_null()) r.std = s.at("std").get<double>();
    r.count = s.at("count").get<std::size_t>();
    out.push_back({source, r});
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string cell_text(const SummaryRow& r) {
  return fmt(r.mean) + (r.std ? " +- " + fmt(*r.std) : " (n=1)");
}

}  // namespace

std::string report_text(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("no such result directory: " + dir.string());
  std::vector<Entry> entries;
  collect_results(dir, "", entries);
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs) collect_results(d, d.filename().string(), entries);
  if (entries.empty()) throw InputError("no results.json found under " + dir.string());

  std::ostringstream os;
  std::vector<std::string> metrics;
  for (const auto& e : entries) {
    if (std::find(metrics.begin(), metrics.end(), e.row.metric) == metrics.end()) metrics.push_back(e.row.metric);
  }
  for (const auto& metric : metrics) {
    os << "== " << metric << " ==\n";
    // One matrix per (source, method): rows are training patterns, columns test patterns.
    std::vector<std::pair<std::string, std::string>> groups;
    for (const auto& e : entries) {
      if (e.row.metric != metric) continue;
      std::pair<std::string, std::string> g{e.source, e.row.method};
      if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
    }
    for (const auto& [source, method] : groups) {
      std::vector<std::string> trains, tests;
      for (const auto& e : entries) {
        if (e.row.metric != metric || e.source != source || e.row.method != method) continue;
        if (std::find(trains.begin(), trains.end(), e.row.train_pattern) == trains.end()) {
          trains.push_back(e.row.train_pattern);
        }
        if (std::find(tests.begin(), tests.end(), e.row.test_pattern) == tests.end()) {
          tests.push_back(e.row.test_pattern);
        }
      }
      os << "\n" << (source.empty() ? "" : source + " / ") << method << "  (rows: train m1/m2, columns: test m1/m2)\n";
      os << std::left << std::setw(10) << "train";
      for (const auto& t : tests) os << std::setw(22) << t;
      os << std::setw(10) << "avg" << '\n';
      for (const auto& tr : trains) {
        os << std::setw(10) << tr;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& te : tests) {
          auto it = std::find_if(entries.begin(), entries.end(), [&](const Entry& e) {
            return e.row.metric == metric && e.source == source && e.row.method == method &&
                   e.row.train_pattern == tr && e.row.test_pattern == te;
          });
          if (it == entries.end()) {
            os << std::setw(22) << "-";
          } else {
            os << std::setw(22) << cell_text(it->row);
            sum += it->row.mean;
            ++n;
          }
        }
        os << std::setw(10) << (n ? fmt(sum / static_cast<double>(n)) : "-") << '\n';
      }
    }
    os << "\nbest per test pattern:\n";
    std::vector<std::string> tests;
    for (const auto& e : entries) {
      if (e.row.metric == metric &&
          std::find(tests.begin(), tests.end(), e.row.test_pattern) == tests.end()) {
        tests.push_back(e.row.test_pattern);
      }
    }
    for (const auto& te : tests) {
      const Entry* best = nullptr;
      for (const auto& e : entries) {
        if (e.row.metric != metric || e.row.test_pattern != te) continue;
        if (!best || e.row.mean > best->row.mean) best = &e;
      }
      os << "  test " << std::setw(8) << te << " -> " << (best->source.empty() ? "" : best->source + " / ")
         << best->row.method << " trained " << best->row.train_pattern << ": " << cell_text(best->row) << '\n';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace missmod
