#include "hsmstack/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <unordered_map>

#include "hsmstack/entropy.hpp"
#include "hsmstack/report.hpp"
#include "hsmstack/rng.hpp"
#include "hsmstack/stacking.hpp"
#include "hsmstack/triage_server.hpp"

namespace hsmstack {

namespace fs = std::filesystem;

PipelineConfig::PipelineConfig() {
  cxe.loss = LossKind::kCxe;
  kld.loss = LossKind::kKld;
  for (TrainConfig* t : {&cxe, &kld}) {
    t->learning_rate = 0.05;
    t->lr_decay = 0.85;
    t->batch_size = 32;
    t->epochs = 12;
  }
}

fs::path PipelineConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : out_dir / p; }

// --- key registry ----------------------------------------------------------

namespace {

struct Entry {
  std::string key;
  bool is_path = false;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("expected a non-negative integer");
  return v;
}

double parse_real(std::string_view s) {
  try {
    return parse_double(s, "value");
  } catch (const DataError&) {
    throw ConfigError("expected a number");
  }
}

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected true or false");
}

template <class T, class Access>
Entry number(std::string key, Access access) {
  Entry e;
  e.key = std::move(key);
  e.get = [access](const PipelineConfig& c) {
    const T& v = access(const_cast<PipelineConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return fmt_double(v);
    } else {
      return std::to_string(v);
    }
  };
  e.set = [access](PipelineConfig& c, std::string_view s) {
    if constexpr (std::is_floating_point_v<T>) {
      access(c) = parse_real(s);
    } else if constexpr (std::is_signed_v<T>) {
      if (!s.empty() && s.front() == '-') throw ConfigError("expected a non-negative integer");
      access(c) = static_cast<T>(parse_u64(s));
    } else {
      const auto v = parse_u64(s);
      if (v > std::numeric_limits<T>::max()) throw ConfigError("value out of range");
      access(c) = static_cast<T>(v);
    }
  };
  return e;
}

template <class Access>
Entry path(std::string key, Access access) {
  Entry e;
  e.key = std::move(key);
  e.is_path = true;
  e.get = [access](const PipelineConfig& c) { return access(const_cast<PipelineConfig&>(c)).string(); };
  e.set = [access](PipelineConfig& c, std::string_view s) { access(c) = fs::path(std::string(s)); };
  return e;
}

template <class Access>
Entry text(std::string key, Access access) {
  Entry e;
  e.key = std::move(key);
  e.get = [access](const PipelineConfig& c) { return access(const_cast<PipelineConfig&>(c)); };
  e.set = [access](PipelineConfig& c, std::string_view s) { access(c) = std::string(s); };
  return e;
}

template <class Access>
Entry flag(std::string key, Access access) {
  Entry e;
  e.key = std::move(key);
  e.get = [access](const PipelineConfig& c) -> std::string {
    return access(const_cast<PipelineConfig&>(c)) ? "true" : "false";
  };
  e.set = [access](PipelineConfig& c, std::string_view s) { access(c) = parse_bool(s); };
  return e;
}

void add_train_entries(std::vector<Entry>& out, const std::string& prefix, TrainConfig PipelineConfig::*member) {
  out.push_back(number<double>(prefix + ".learning_rate", [member](PipelineConfig& c) -> double& {
    return (c.*member).learning_rate;
  }));
  out.push_back(number<double>(prefix + ".lr_decay", [member](PipelineConfig& c) -> double& {
    return (c.*member).lr_decay;
  }));
  out.push_back(number<std::size_t>(prefix + ".batch_size", [member](PipelineConfig& c) -> std::size_t& {
    return (c.*member).batch_size;
  }));
  out.push_back(number<std::size_t>(prefix + ".epochs", [member](PipelineConfig& c) -> std::size_t& {
    return (c.*member).epochs;
  }));
  out.push_back(number<double>(prefix + ".momentum", [member](PipelineConfig& c) -> double& {
    return (c.*member).momentum;
  }));
  Entry opt;
  opt.key = prefix + ".optimizer";
  opt.get = [member](const PipelineConfig& c) -> std::string {
    return (c.*member).optimizer == OptimizerKind::kAdam ? "adam" : "sgd";
  };
  opt.set = [member](PipelineConfig& c, std::string_view s) {
    if (s == "sgd") {
      (c.*member).optimizer = OptimizerKind::kSgdMomentum;
    } else if (s == "adam") {
      (c.*member).optimizer = OptimizerKind::kAdam;
    } else {
      throw ConfigError("expected sgd or adam");
    }
  };
  out.push_back(std::move(opt));
}

std::vector<Entry> build_registry() {
  using C = PipelineConfig;
  std::vector<Entry> r;
  r.push_back(number<std::uint64_t>("seed", [](C& c) -> std::uint64_t& { return c.seed; }));
  r.push_back(path("paths.out_dir", [](C& c) -> fs::path& { return c.out_dir; }));
  r.push_back(path("paths.images", [](C& c) -> fs::path& { return c.images; }));
  r.push_back(path("paths.annotations", [](C& c) -> fs::path& { return c.annotations; }));
  r.push_back(path("paths.truth", [](C& c) -> fs::path& { return c.truth; }));
  r.push_back(path("paths.hsm", [](C& c) -> fs::path& { return c.hsm; }));
  r.push_back(path("paths.model_cxe", [](C& c) -> fs::path& { return c.model_cxe; }));
  r.push_back(path("paths.model_kld", [](C& c) -> fs::path& { return c.model_kld; }));
  r.push_back(path("paths.pred_cxe", [](C& c) -> fs::path& { return c.pred_cxe; }));
  r.push_back(path("paths.pred_kld", [](C& c) -> fs::path& { return c.pred_kld; }));
  r.push_back(path("paths.pred_knn", [](C& c) -> fs::path& { return c.pred_knn; }));
  r.push_back(path("paths.features", [](C& c) -> fs::path& { return c.features; }));
  r.push_back(path("paths.analysis_dir", [](C& c) -> fs::path& { return c.analysis_dir; }));
  r.push_back(path("paths.svm", [](C& c) -> fs::path& { return c.svm; }));
  r.push_back(path("paths.report_dir", [](C& c) -> fs::path& { return c.report_dir; }));
  r.push_back(path("paths.decisions", [](C& c) -> fs::path& { return c.decisions; }));
  r.push_back(path("paths.static_dir", [](C& c) -> fs::path& { return c.static_dir; }));

  r.push_back(number<std::size_t>("synth.n_images", [](C& c) -> std::size_t& { return c.synth.n_images; }));
  r.push_back(number<std::uint32_t>("synth.height", [](C& c) -> std::uint32_t& { return c.synth.height; }));
  r.push_back(number<std::uint32_t>("synth.width", [](C& c) -> std::uint32_t& { return c.synth.width; }));
  r.push_back(number<double>("synth.degradation", [](C& c) -> double& { return c.synth.degradation; }));
  r.push_back(number<double>("synth.damage_gain", [](C& c) -> double& { return c.synth.damage_gain; }));
  r.push_back(number<double>("synth.mean_annotations", [](C& c) -> double& { return c.synth.mean_annotations; }));
  r.push_back(number<std::size_t>("synth.annotators", [](C& c) -> std::size_t& { return c.annotators.n_annotators; }));
  r.push_back(number<double>("synth.error_min", [](C& c) -> double& { return c.annotators.error_min; }));
  r.push_back(number<double>("synth.error_max", [](C& c) -> double& { return c.annotators.error_max; }));
  r.push_back(number<double>("synth.chasing_min", [](C& c) -> double& { return c.annotators.chasing_min; }));
  r.push_back(number<double>("synth.chasing_max", [](C& c) -> double& { return c.annotators.chasing_max; }));
  Entry kernel;
  kernel.key = "synth.kernel";
  kernel.get = [](const C& c) -> std::string {
    return c.annotators.kernel == KernelKind::kUniform ? "uniform" : "confusable";
  };
  kernel.set = [](C& c, std::string_view s) {
    if (s == "uniform") {
      c.annotators.kernel = KernelKind::kUniform;
    } else if (s == "confusable") {
      c.annotators.kernel = KernelKind::kConfusable;
    } else {
      throw ConfigError("expected confusable or uniform");
    }
  };
  r.push_back(std::move(kernel));

  r.push_back(number<std::size_t>("net.stem_filters", [](C& c) -> std::size_t& { return c.net.stem_filters; }));
  r.push_back(number<std::size_t>("net.residual_blocks", [](C& c) -> std::size_t& { return c.net.residual_blocks; }));
  r.push_back(number<std::size_t>("net.dense_width", [](C& c) -> std::size_t& { return c.net.dense_width; }));
  r.push_back(number<double>("net.dropout", [](C& c) -> double& { return c.net.dropout; }));
  add_train_entries(r, "cxe", &C::cxe);
  add_train_entries(r, "kld", &C::kld);
  r.push_back(number<double>("train.holdout_fraction", [](C& c) -> double& { return c.holdout_fraction; }));

  r.push_back(number<std::size_t>("knn.k", [](C& c) -> std::size_t& { return c.knn_k; }));
  r.push_back(flag("knn.exclude_self", [](C& c) -> bool& { return c.knn_exclude_self; }));

  r.push_back(number<double>("svm.lambda", [](C& c) -> double& { return c.svm_params.lambda; }));
  r.push_back(number<std::size_t>("svm.epochs", [](C& c) -> std::size_t& { return c.svm_params.epochs; }));
  r.push_back(number<double>("svm.train_ratio", [](C& c) -> double& { return c.svm_params.train_ratio; }));

  r.push_back(number<std::size_t>("analyze.bins", [](C& c) -> std::size_t& { return c.bins; }));
  r.push_back(text("analyze.character", [](C& c) -> std::string& { return c.focus_character; }));

  r.push_back(number<double>("triage.min_entropy", [](C& c) -> double& { return c.triage.min_entropy; }));
  r.push_back(number<std::uint32_t>("triage.min_annotations",
                                    [](C& c) -> std::uint32_t& { return c.triage.min_annotations; }));
  r.push_back(number<double>("triage.model_confidence", [](C& c) -> double& { return c.triage.model_confidence; }));
  r.push_back(text("triage.host", [](C& c) -> std::string& { return c.host; }));
  r.push_back(number<int>("triage.port", [](C& c) -> int& { return c.port; }));
  std::sort(r.begin(), r.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
  return r;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> r = build_registry();
  return r;
}

const Entry& find_entry(std::string_view key) {
  for (const auto& e : registry()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void assign(PipelineConfig& config, std::string_view assignment, const std::string& where) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
  const auto key = trim(assignment.substr(0, eq));
  const auto value = trim(assignment.substr(eq + 1));
  try {
    find_entry(key).set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + std::string(key) + ": " + e.what());
  }
}

}  // namespace

void apply_config_text(PipelineConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    assign(config, line, "config line " + std::to_string(line_no));
  }
}

void apply_override(PipelineConfig& config, std::string_view assignment) {
  assign(config, assignment, "override '" + std::string(assignment) + "'");
}

PipelineConfig load_config(const fs::path& path) {
  PipelineConfig config;
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  apply_config_text(config, text);
  return config;
}

std::string dump_config(const PipelineConfig& config) {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(config) + '\n';
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::uint64_t config_hash(const PipelineConfig& config) {
  std::uint64_t h = fnv1a("");
  for (const auto& e : registry()) {
    if (e.is_path || e.key.starts_with("triage.host") || e.key.starts_with("triage.port")) continue;
    h = fnv1a(e.key + '=' + e.get(config) + '\n', h);
  }
  return h;
}

std::string artifact_header(const PipelineConfig& config, std::string_view stage) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "hsmstack config_hash=%016" PRIx64 " seed=%" PRIu64 " stage=", config_hash(config),
                config.seed);
  return std::string(buf) + std::string(stage);
}

std::vector<std::string> validate_config(const PipelineConfig& c) {
  std::vector<std::string> problems;
  auto need = [&](bool ok, const std::string& message) {
    if (!ok) problems.push_back(message);
  };
  need(c.knn_k >= 1, "knn.k must be >= 1");
  need(c.synth.n_images >= 1, "synth.n_images must be >= 1");
  need(c.synth.height >= kMinInputSide && c.synth.width >= kMinInputSide,
       "synth.height and synth.width must be >= " + std::to_string(kMinInputSide));
  need(c.synth.degradation >= 0.0 && c.synth.degradation <= 1.0, "synth.degradation must lie in [0, 1]");
  need(c.synth.mean_annotations > 0.0, "synth.mean_annotations must be > 0");
  need(c.synth.damage_gain >= 0.0, "synth.damage_gain must be >= 0");
  need(c.annotators.n_annotators >= 1, "synth.annotators must be >= 1");
  need(c.annotators.error_min >= 0.0 && c.annotators.error_min <= c.annotators.error_max &&
           c.annotators.error_max <= 1.0,
       "synth.error_min/error_max must satisfy 0 <= min <= max <= 1");
  need(c.annotators.chasing_min > 0.0 && c.annotators.chasing_min <= c.annotators.chasing_max,
       "synth.chasing_min/chasing_max must satisfy 0 < min <= max");
  need(c.net.stem_filters >= 1, "net.stem_filters must be >= 1");
  need(c.net.dense_width >= 1, "net.dense_width must be >= 1");
  need(c.net.dropout >= 0.0 && c.net.dropout < 1.0, "net.dropout must lie in [0, 1)");
  for (const auto& [name, t] : {std::pair<std::string, const TrainConfig*>{"cxe", &c.cxe}, {"kld", &c.kld}}) {
    need(t->learning_rate > 0.0, name + ".learning_rate must be > 0");
    need(t->lr_decay > 0.0 && t->lr_decay <= 1.0, name + ".lr_decay must lie in (0, 1]");
    need(t->batch_size >= 1, name + ".batch_size must be >= 1");
    need(t->epochs >= 1, name + ".epochs must be >= 1");
    need(t->momentum >= 0.0 && t->momentum < 1.0, name + ".momentum must lie in [0, 1)");
  }
  need(c.holdout_fraction >= 0.0 && c.holdout_fraction <= 0.5, "train.holdout_fraction must lie in [0, 0.5]");
  need(c.svm_params.lambda > 0.0, "svm.lambda must be > 0");
  need(c.svm_params.epochs >= 1, "svm.epochs must be >= 1");
  need(c.svm_params.train_ratio > 0.0 && c.svm_params.train_ratio < 1.0, "svm.train_ratio must lie in (0, 1)");
  need(c.bins >= 1, "analyze.bins must be >= 1");
  if (!c.focus_character.empty()) {
    try {
      (void)class_from_name(c.focus_character);
    } catch (const DataError&) {
      problems.push_back("analyze.character '" + c.focus_character + "' is not a class name");
    }
  }
  need(c.triage.min_entropy >= 0.0, "triage.min_entropy must be >= 0");
  need(c.triage.model_confidence >= 0.0, "triage.model_confidence must be >= 0");
  need(c.port >= 0 && c.port <= 65535, "triage.port must lie in [0, 65535]");

  std::vector<std::pair<std::string, fs::path>> files;
  for (const auto& e : registry()) {
    if (!e.is_path || e.key == "paths.out_dir" || e.key == "paths.static_dir") continue;
    files.emplace_back(e.key, c.resolve(fs::path(e.get(c))).lexically_normal());
  }
  files.emplace_back("paths.images (manifest)", manifest_path(c.resolve(c.images)).lexically_normal());
  for (std::size_t i = 0; i < files.size(); ++i) {
    for (std::size_t j = i + 1; j < files.size(); ++j) {
      if (files[i].second == files[j].second) {
        problems.push_back("path collision: " + files[i].first + " and " + files[j].first + " both resolve to " +
                           files[i].second.string());
      }
    }
  }
  return problems;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth", "hsm",    "train",  "infer", "stack",
                                              "analyze", "svm", "report", "serve"};
  return names;
}

// --- stages ------------------------------------------------------------------

namespace {

fs::path require(const PipelineConfig& c, const fs::path& p, std::string_view stage, std::string_view producer) {
  const fs::path full = c.resolve(p);
  if (!fs::exists(full)) {
    throw DependencyError(std::string(stage) + ": missing input " + full.string() + " (run '" +
                          std::string(producer) + "' first)");
  }
  return full;
}

std::uint64_t stage_seed(const PipelineConfig& c, std::string_view purpose) { return derive_seed(c.seed, purpose); }

std::map<std::string, const HsmRecord*> by_id(const std::vector<HsmRecord>& hsm) {
  std::map<std::string, const HsmRecord*> m;
  for (const auto& r : hsm) m.emplace(r.image_id, &r);
  return m;
}

/// Images reordered to match `hsm` (both sorted by id), rejecting mismatches.
std::vector<GlyphImage> align_images(std::vector<GlyphImage> images, const std::vector<HsmRecord>& hsm,
                                     std::string_view stage) {
  if (images.size() != hsm.size()) {
    throw DataError(std::string(stage) + ": " + std::to_string(images.size()) + " images but " +
                    std::to_string(hsm.size()) + " HSM records");
  }
  std::sort(images.begin(), images.end(),
            [](const GlyphImage& a, const GlyphImage& b) { return a.image_id < b.image_id; });
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].image_id != hsm[i].image_id) {
      throw DataError(std::string(stage) + ": image " + images[i].image_id + " has no HSM record");
    }
  }
  return images;
}

fs::path holdout_path(const PipelineConfig& c) { return c.resolve("holdout.txt"); }

std::set<std::string> read_id_list(const fs::path& p) {
  std::set<std::string> ids;
  const std::string text = read_text_file(p);
  for (auto line : split(text, '\n')) {
    if (line.empty() || line.front() == '#') continue;
    ids.emplace(line);
  }
  return ids;
}

void write_analysis(const PipelineConfig& c, const fs::path& dir, const std::string& suffix,
                    const std::vector<std::pair<std::string, std::vector<EntropyProfile>>>& sets,
                    const std::string& header) {
  const std::string head = comment_block(header);
  for (const auto& [tag, profiles] : sets) {
    const bool is_hsm = tag == "HSM";
    for (const auto& h : entropy_histogram(profiles, c.bins, !is_hsm)) {
      write_text_file(dir / ("hist_" + tag + "_" + std::string(population_name(h.population)) + suffix + ".csv"),
                      head + histogram_csv(h));
    }
    if (!is_hsm) {
      write_text_file(dir / ("frac_correct_" + tag + suffix + ".csv"),
                      head + fraction_csv(fraction_correct_vs_entropy(profiles, c.bins)));
    }
    write_text_file(dir / ("ent_vs_annot_" + tag + suffix + ".csv"),
                    head + annotation_scatter_csv(entropy_vs_annotations(profiles)));
  }
}

std::vector<EntropyProfile> filter_character(const std::vector<EntropyProfile>& in, ClassId c) {
  std::vector<EntropyProfile> out;
  for (const auto& p : in) {
    if (p.consensus == c) out.push_back(p);
  }
  return out;
}

struct LoadedPredictions {
  std::vector<HsmRecord> hsm;
  std::vector<Prediction> cxe;
  std::vector<Prediction> kld;
  std::vector<Prediction> knn;
};

LoadedPredictions load_all_predictions(const PipelineConfig& c, std::string_view stage) {
  LoadedPredictions p;
  p.hsm = load_hsm(require(c, c.hsm, stage, "hsm"));
  p.cxe = load_predictions(require(c, c.pred_cxe, stage, "infer"));
  p.kld = load_predictions(require(c, c.pred_kld, stage, "infer"));
  p.knn = load_predictions(require(c, c.pred_knn, stage, "stack"));
  return p;
}

double accuracy_on(const std::vector<Prediction>& preds, const std::map<std::string, const HsmRecord*>& hsm,
                   const std::set<std::string>* subset, std::size_t& n) {
  std::size_t good = 0;
  n = 0;
  for (const auto& p : preds) {
    if (subset && !subset->contains(p.image_id)) continue;
    const auto it = hsm.find(p.image_id);
    if (it == hsm.end()) throw DataError("report: no HSM record for " + p.image_id);
    ++n;
    if (argmax_class(p.probs) == it->second->consensus) ++good;
  }
  return n == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(n);
}

}  // namespace

std::vector<std::string> holdout_ids(const std::vector<HsmRecord>& hsm, double fraction, std::uint64_t seed) {
  std::array<std::vector<std::string>, kNumClasses> groups;
  for (const auto& r : hsm) groups[r.consensus.index()].push_back(r.image_id);
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(g.size())));
    out.insert(out.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(std::min(take, g.size())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void stage_synth(const PipelineConfig& c, std::ostream& log) {
  SynthConfig sc = c.synth;
  sc.seed = stage_seed(c, "synth");
  const auto data = generate_images(sc);
  const auto pool = make_annotator_pool(c.annotators, stage_seed(c, "synth.pool"));
  std::vector<std::string> ids;
  ids.reserve(data.images.size());
  for (const auto& img : data.images) ids.push_back(img.image_id);
  const auto votes = simulate_annotations(ids, data.truths, pool, sc.mean_annotations, stage_seed(c, "synth.votes"),
                                          DamageCoupling{data.damage, sc.damage_gain});
  const std::string header = artifact_header(c, "synth");
  store_images(c.resolve(c.images), data.images);
  store_annotations(c.resolve(c.annotations), votes, header);
  store_truth(c.resolve(c.truth), ids, data.truths, header);
  log << "synth: " << data.images.size() << " images, " << votes.size() << " annotations from " << pool.size()
      << " annotators\n";
}

void stage_hsm(const PipelineConfig& c, std::ostream& log) {
  const auto records = load_annotations(require(c, c.annotations, "hsm", "synth"));
  const auto hsm = build_hsm_dataset(records);
  store_hsm(c.resolve(c.hsm), hsm, artifact_header(c, "hsm"));
  const auto ties = std::count_if(hsm.begin(), hsm.end(), [](const HsmRecord& r) { return r.tie; });
  log << "hsm: " << hsm.size() << " images from " << records.size() << " annotations (" << ties
      << " consensus ties)\n";
}

void stage_train(const PipelineConfig& c, std::ostream& log) {
  const auto hsm = load_hsm(require(c, c.hsm, "train", "hsm"));
  const auto images = align_images(load_images(require(c, c.images, "train", "synth")), hsm, "train");
  if (images.empty()) throw DataError("train: no images");
  const auto held = holdout_ids(hsm, c.holdout_fraction, stage_seed(c, "holdout"));
  const std::set<std::string> held_set(held.begin(), held.end());

  std::string holdout_text = comment_block(artifact_header(c, "train"));
  for (const auto& id : held) holdout_text += id + '\n';
  write_text_file(holdout_path(c), holdout_text);

  std::vector<GlyphImage> train_images;
  std::vector<ProbVector> delta_targets;
  std::vector<ProbVector> hsm_targets;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (held_set.contains(images[i].image_id)) continue;
    train_images.push_back(images[i]);
    delta_targets.push_back(delta_distribution(hsm[i].consensus));
    hsm_targets.push_back(hsm[i].hsm);
  }
  NetConfig nc = c.net;
  nc.height = images.front().height;
  nc.width = images.front().width;
  const std::uint64_t init_seed = stage_seed(c, "network");
  const std::uint64_t train_seed = stage_seed(c, "train");

  struct Job {
    const char* name;
    TrainConfig config;
    const std::vector<ProbVector>* targets;
    fs::path model;
  };
  const Job jobs[] = {{"CXE", c.cxe, &delta_targets, c.model_cxe}, {"KLD", c.kld, &hsm_targets, c.model_kld}};
  for (const auto& job : jobs) {
    TrainConfig tc = job.config;
    tc.seed = train_seed;
    Network net(nc, init_seed);
    log << "train " << job.name << ": " << train_images.size() << " images (" << held.size() << " held out), "
        << tc.epochs << " epochs, " << net.parameter_count() << " parameters\n";
    const auto history = train(net, train_images, *job.targets, tc);
    for (const auto& e : history.epochs) {
      log << "  epoch " << e.epoch << " loss " << format_prob(e.loss) << ' ' << e.metric_name << ' '
          << format_prob(e.metric_value) << '\n';
    }
    const fs::path model_path = c.resolve(job.model);
    if (model_path.has_parent_path()) fs::create_directories(model_path.parent_path());
    net.save(model_path);
    std::string name = job.name;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::tolower(ch); });
    write_text_file(c.resolve("train_" + name + ".log"),
                    comment_block(artifact_header(c, "train")) + history_log(history));
  }
}

void stage_infer(const PipelineConfig& c, std::ostream& log) {
  const auto images = load_images(require(c, c.images, "infer", "synth"));
  const std::pair<ModelTag, std::pair<fs::path, fs::path>> jobs[] = {
      {ModelTag::kCxe, {c.model_cxe, c.pred_cxe}}, {ModelTag::kKld, {c.model_kld, c.pred_kld}}};
  for (const auto& [tag, io] : jobs) {
    Network net = Network::load(require(c, io.first, "infer", "train"));
    if (!images.empty() && (net.config().height != images.front().height || net.config().width != images.front().width)) {
      throw DataError("infer: model input size does not match the images");
    }
    auto preds = infer_all(net, images, tag);
    std::sort(preds.begin(), preds.end(),
              [](const Prediction& a, const Prediction& b) { return a.image_id < b.image_id; });
    store_predictions(c.resolve(io.second), preds, artifact_header(c, "infer"));
    log << "infer " << model_tag_name(tag) << ": " << preds.size() << " predictions\n";
  }
}

void stage_stack(const PipelineConfig& c, std::ostream& log) {
  const auto cxe = load_predictions(require(c, c.pred_cxe, "stack", "infer"));
  const auto kld = load_predictions(require(c, c.pred_kld, "stack", "infer"));
  const auto hsm = load_hsm(require(c, c.hsm, "stack", "hsm"));
  auto features = concat_features(cxe, kld);
  const auto index = by_id(hsm);
  std::vector<ClassId> labels;
  labels.reserve(features.size());
  for (const auto& f : features) {
    const auto it = index.find(f.image_id);
    if (it == index.end()) throw DataError("stack: no HSM record for " + f.image_id);
    labels.push_back(it->second->consensus);
  }
  const std::string header = artifact_header(c, "stack");
  store_features(c.resolve(c.features), features, header);
  const KnnModel model = knn_fit(features, labels, c.knn_k);
  const auto preds = knn_predict_all(model, features, c.knn_exclude_self);
  store_predictions(c.resolve(c.pred_knn), preds, header);
  log << "stack: k = " << c.knn_k << " over " << features.size() << " stacked features"
      << (c.knn_exclude_self ? " (self excluded)" : "") << '\n';
}

void stage_analyze(const PipelineConfig& c, std::ostream& log) {
  const auto in = load_all_predictions(c, "analyze");
  std::vector<std::pair<std::string, std::vector<EntropyProfile>>> sets{{"HSM", hsm_profiles(in.hsm)},
                                                                        {"CXE", build_profiles(in.hsm, in.cxe)},
                                                                        {"KLD", build_profiles(in.hsm, in.kld)},
                                                                        {"KNN", build_profiles(in.hsm, in.knn)}};
  const fs::path dir = c.resolve(c.analysis_dir);
  const std::string header = artifact_header(c, "analyze");
  write_analysis(c, dir, "", sets, header);
  if (!c.focus_character.empty()) {
    const ClassId focus = class_from_name(c.focus_character);
    std::vector<std::pair<std::string, std::vector<EntropyProfile>>> focused;
    for (const auto& [tag, profiles] : sets) focused.emplace_back(tag, filter_character(profiles, focus));
    write_analysis(c, dir, "_" + c.focus_character, focused, header);
  }
  std::string summary = comment_block(header) + "model,n_correct,n_incorrect,mean_entropy_correct,mean_entropy_incorrect\n";
  for (std::size_t i = 1; i < sets.size(); ++i) {
    const auto s = entropy_separation(sets[i].second);
    summary += sets[i].first + ',' + std::to_string(s.n_correct) + ',' + std::to_string(s.n_incorrect) + ',' +
               format_prob(s.mean_correct) + ',' + format_prob(s.mean_incorrect) + '\n';
    log << "analyze " << sets[i].first << ": mean entropy correct " << format_prob(s.mean_correct) << " ("
        << s.n_correct << "), incorrect " << format_prob(s.mean_incorrect) << " (" << s.n_incorrect << ")\n";
  }
  write_text_file(dir / "entropy_summary.csv", summary);
}

void stage_svm(const PipelineConfig& c, std::ostream& log) {
  const auto in = load_all_predictions(c, "svm");
  const std::string header = artifact_header(c, "svm");
  std::string table = comment_block(header);
  std::string skipped = comment_block(header) + "model_tag,character,reason\n";
  bool first = true;
  const std::pair<const char*, const std::vector<Prediction>*> models[] = {
      {"CXE", &in.cxe}, {"KLD", &in.kld}, {"KNN", &in.knn}};
  for (const auto& [tag, preds] : models) {
    const auto profiles = build_profiles(in.hsm, *preds);
    const auto result = run_per_character(profiles, tag, c.svm_params, stage_seed(c, "svm"));
    table += svm_table_csv(result, first);
    first = false;
    for (const auto& s : result.skipped) skipped += std::string(tag) + ',' + s.character + ',' + s.reason + '\n';
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (const auto& r : result.rows) {
      fp += r.eval.false_pos;
      fn += r.eval.false_neg;
    }
    log << "svm " << tag << ": " << result.rows.size() << " characters fitted, " << result.skipped.size()
        << " skipped, FP " << fp << " FN " << fn << '\n';
  }
  const fs::path out = c.resolve(c.svm);
  write_text_file(out, table);
  write_text_file(out.parent_path() / (out.stem().string() + "_skipped.csv"), skipped);
}

void stage_report(const PipelineConfig& c, std::ostream& log) {
  const auto in = load_all_predictions(c, "report");
  const fs::path dir = c.resolve(c.report_dir);
  const std::string head = comment_block(artifact_header(c, "report"));

  const auto table = agreement(in.cxe, in.kld, in.hsm);
  write_text_file(dir / "agreement.txt", head + agreement_text(table, "cxe", "kld"));

  std::vector<ModelConfusion> models{{"cxe", confusion(in.cxe, in.hsm)},
                                     {"kld", confusion(in.kld, in.hsm)},
                                     {"knn", confusion(in.knn, in.hsm)}};
  for (const auto& m : models) write_text_file(dir / ("confusion_" + m.model_tag + ".csv"), head + confusion_csv(m.matrix));
  write_text_file(dir / "per_character.csv", head + per_character_csv(per_character_table(models), models));

  const auto index = by_id(in.hsm);
  std::optional<std::set<std::string>> held;
  if (fs::exists(holdout_path(c))) held = read_id_list(holdout_path(c));
  std::size_t disagree = 0;
  {
    std::unordered_map<std::string_view, const Prediction*> kld_by_id;
    for (const auto& p : in.kld) kld_by_id.emplace(p.image_id, &p);
    for (const auto& p : in.cxe) {
      const auto it = kld_by_id.find(p.image_id);
      if (it == kld_by_id.end()) throw DataError("report: no KLD prediction for " + p.image_id);
      if (argmax_class(p.probs) != argmax_class(it->second->probs)) ++disagree;
    }
  }
  std::string summary = head + "metric,value\n";
  const std::pair<const char*, const std::vector<Prediction>*> sets[] = {
      {"cxe", &in.cxe}, {"kld", &in.kld}, {"knn", &in.knn}};
  for (const auto& [tag, preds] : sets) {
    std::size_t n = 0;
    const double acc = accuracy_on(*preds, index, nullptr, n);
    summary += std::string(tag) + "_accuracy," + format_prob(acc) + '\n';
    log << "report " << tag << ": accuracy " << format_prob(acc) << " on " << n << " images";
    if (held && !held->empty()) {
      std::size_t nh = 0;
      const double hacc = accuracy_on(*preds, index, &*held, nh);
      summary += std::string(tag) + "_holdout_accuracy," + format_prob(hacc) + '\n';
      log << ", held-out " << format_prob(hacc) << " on " << nh;
    }
    log << '\n';
  }
  const double disagreement = in.cxe.empty() ? 0.0 : static_cast<double>(disagree) / static_cast<double>(in.cxe.size());
  summary += "cxe_kld_disagreement," + format_prob(disagreement) + '\n';
  write_text_file(dir / "summary.csv", summary);
  log << "report: CXE/KLD disagree on " << disagree << " images (" << format_prob(disagreement) << ")\n";

  if (fs::exists(c.resolve(c.truth))) {
    const auto diag = truth_diagnostics(load_truth(c.resolve(c.truth)), in.hsm);
    write_text_file(dir / "truth_diagnostics.csv", head + truth_diagnostics_csv(diag));
    log << "report: consensus matches synthetic truth on " << format_prob(diag.agreement()) << " of images\n";
  }
}

void stage_serve(const PipelineConfig& c, std::ostream& log) {
  auto in = load_all_predictions(c, "serve");
  TriageInputs inputs{std::move(in.hsm), std::move(in.cxe), std::move(in.kld), std::move(in.knn), {}};
  if (fs::exists(c.resolve(c.images))) inputs.images = load_images(c.resolve(c.images));
  TriageService service(std::move(inputs), c.triage, c.resolve(c.decisions));
  ServeOptions opts;
  opts.host = c.host;
  opts.port = c.port;
  if (!c.static_dir.empty()) opts.static_dir = c.static_dir;
  TriageHttpServer server(service, opts);
  const int port = server.bind();
  if (port < 0) throw DataError("serve: cannot bind " + c.host + ":" + std::to_string(c.port));
  log << "serve: " << service.flag_count() << " flagged images on http://" << c.host << ':' << port << '\n';
  log.flush();
  server.run();
}

int run_stage(std::string_view stage, const PipelineConfig& config, std::ostream& log, std::ostream& err) {
  using Fn = void (*)(const PipelineConfig&, std::ostream&);
  static const std::map<std::string, Fn, std::less<>> stages{
      {"synth", stage_synth}, {"hsm", stage_hsm},       {"train", stage_train},   {"infer", stage_infer},
      {"stack", stage_stack}, {"analyze", stage_analyze}, {"svm", stage_svm}, {"report", stage_report},
      {"serve", stage_serve}};
  const auto it = stages.find(stage);
  if (it == stages.end()) {
    err << "error: unknown stage '" << stage << "'\n";
    return kExitUsage;
  }
  const auto problems = validate_config(config);
  if (!problems.empty()) {
    for (const auto& p : problems) err << "config: " << p << '\n';
    return kExitUsage;
  }
  try {
    it->second(config, log);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << stage << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace hsmstack
