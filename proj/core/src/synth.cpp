#include "hsmstack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "hsmstack/rng.hpp"

namespace hsmstack {

namespace {

struct Point {
  double x;
  double y;
};

using Stroke = std::vector<Point>;
using Glyph = std::vector<Stroke>;

Stroke line(std::initializer_list<Point> pts) { return Stroke(pts); }

// y = cy + ry*sin(a): angles grow clockwise on screen, a = -pi/2 is the top.
Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int segments = 16) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double a = a0 + (a1 - a0) * i / segments;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

constexpr double kPi = std::numbers::pi;

std::vector<Glyph> build_templates() {
  std::vector<Glyph> g(kNumClasses);
  g[0] = {line({{0.2, 0.9}, {0.5, 0.1}, {0.8, 0.9}}), line({{0.32, 0.6}, {0.68, 0.6}})};
  g[1] = {line({{0.3, 0.1}, {0.3, 0.9}}), arc(0.3, 0.3, 0.35, 0.2, -kPi / 2, kPi / 2),
          arc(0.3, 0.7, 0.42, 0.2, -kPi / 2, kPi / 2)};
  g[2] = {line({{0.3, 0.9}, {0.3, 0.1}, {0.75, 0.1}})};
  g[3] = {line({{0.5, 0.1}, {0.2, 0.9}, {0.8, 0.9}, {0.5, 0.1}})};
  g[4] = {line({{0.75, 0.1}, {0.3, 0.1}, {0.3, 0.9}, {0.75, 0.9}}), line({{0.3, 0.5}, {0.65, 0.5}})};
  g[5] = {line({{0.25, 0.1}, {0.75, 0.1}, {0.25, 0.9}, {0.75, 0.9}})};
  g[6] = {line({{0.25, 0.1}, {0.25, 0.9}}), line({{0.75, 0.1}, {0.75, 0.9}}), line({{0.25, 0.5}, {0.75, 0.5}})};
  g[7] = {arc(0.5, 0.5, 0.3, 0.4, 0, 2 * kPi, 28), line({{0.35, 0.5}, {0.65, 0.5}})};
  g[8] = {line({{0.5, 0.1}, {0.5, 0.9}})};
  g[9] = {line({{0.3, 0.1}, {0.3, 0.9}}), line({{0.75, 0.1}, {0.3, 0.55}}), line({{0.42, 0.45}, {0.75, 0.9}})};
  g[10] = {line({{0.2, 0.9}, {0.5, 0.1}, {0.8, 0.9}})};
  g[11] = {line({{0.2, 0.9}, {0.2, 0.1}, {0.5, 0.6}, {0.8, 0.1}, {0.8, 0.9}})};
  g[12] = {line({{0.25, 0.9}, {0.25, 0.1}, {0.75, 0.9}, {0.75, 0.1}})};
  g[13] = {line({{0.25, 0.1}, {0.75, 0.1}}), line({{0.33, 0.5}, {0.67, 0.5}}), line({{0.25, 0.9}, {0.75, 0.9}})};
  g[14] = {arc(0.5, 0.5, 0.3, 0.4, 0, 2 * kPi, 28)};
  g[15] = {line({{0.25, 0.9}, {0.25, 0.1}, {0.75, 0.1}, {0.75, 0.9}})};
  g[16] = {line({{0.3, 0.1}, {0.3, 0.9}}), arc(0.3, 0.3, 0.4, 0.2, -kPi / 2, kPi / 2)};
  g[17] = {line({{0.75, 0.1}, {0.25, 0.1}, {0.55, 0.5}, {0.25, 0.9}, {0.75, 0.9}})};
  g[18] = {line({{0.2, 0.1}, {0.8, 0.1}}), line({{0.5, 0.1}, {0.5, 0.9}})};
  g[19] = {line({{0.2, 0.1}, {0.5, 0.5}, {0.8, 0.1}}), line({{0.5, 0.5}, {0.5, 0.9}})};
  g[20] = {line({{0.5, 0.1}, {0.5, 0.9}}), arc(0.5, 0.5, 0.3, 0.22, 0, 2 * kPi, 24)};
  g[21] = {line({{0.2, 0.1}, {0.8, 0.9}}), line({{0.8, 0.1}, {0.2, 0.9}})};
  g[22] = {line({{0.5, 0.1}, {0.5, 0.9}}), arc(0.5, 0.15, 0.3, 0.35, 0, kPi)};
  g[23] = {arc(0.5, 0.45, 0.3, 0.33, 0.7 * kPi, 2.3 * kPi, 24), line({{0.32, 0.72}, {0.36, 0.9}, {0.2, 0.9}}),
           line({{0.68, 0.72}, {0.64, 0.9}, {0.8, 0.9}})};
  return g;
}

const std::vector<Glyph>& templates() {
  static const std::vector<Glyph> t = build_templates();
  return t;
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double normal(std::mt19937_64& rng) {
  // Box-Muller on our own uniforms keeps draws identical across standard libraries.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

std::size_t categorical(const double* weights, std::size_t n, std::mt19937_64& rng) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += weights[i];
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < n; ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Floating-point slack: return the last index with positive weight.
  for (std::size_t i = n; i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return n - 1;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x;
  const double ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

struct Disk {
  Point c;
  double r;
};

}  // namespace

const std::array<std::uint32_t, kNumClasses>& corpus_letter_counts() {
  static const std::array<std::uint32_t, kNumClasses> counts{42546, 2534,  6907,  11717, 31584, 1425,
                                                             15064, 7575,  25595, 17937, 13253, 13227,
                                                             44910, 1201,  46344, 17114, 20450, 62,
                                                             32045, 15762, 6063,  9156,  904,   16046};
  return counts;
}

ProbVector default_class_proportions() {
  const auto& counts = corpus_letter_counts();
  double total = 0.0;
  for (auto c : counts) total += c;
  ProbVector p{};
  for (std::size_t i = 0; i < kNumClasses; ++i) p[i] = counts[i] / total;
  return p;
}

Kernel make_kernel(KernelKind kind) {
  Kernel k{};
  if (kind == KernelKind::kUniform) {
    for (auto& row : k) row.fill(1.0 / kNumClasses);
    return k;
  }
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      if (i == j) continue;
      const std::size_t gap = i > j ? i - j : j - i;
      k[i][j] = gap == 1 ? 1.0 : 0.1;
    }
  }
  const std::pair<const char*, const char*> lookalikes[] = {
      {"Gamma", "Psi"},   {"Gamma", "Tau"},    {"Omicron", "Theta"}, {"Alpha", "Lambda"}, {"Alpha", "Delta"},
      {"Lambda", "Delta"}, {"Eta", "Nu"},      {"Epsilon", "Sigma"}, {"Pi", "Eta"},       {"Kappa", "Chi"},
      {"Iota", "Tau"},    {"Upsilon", "Psi"},  {"Phi", "Psi"},       {"Omicron", "Omega"}, {"Beta", "Rho"},
      {"Xi", "Epsilon"},  {"Zeta", "Xi"},      {"Mu", "Nu"},         {"Phi", "Theta"},    {"Iota", "Upsilon"}};
  for (const auto& [a, b] : lookalikes) {
    const auto ia = class_from_name(a).index();
    const auto ib = class_from_name(b).index();
    k[ia][ib] += 4.0;
    k[ib][ia] += 4.0;
  }
  for (auto& row : k) {
    double s = 0.0;
    for (double v : row) s += v;
    for (double& v : row) v /= s;
  }
  return k;
}

std::vector<AnnotatorProfile> make_annotator_pool(const AnnotatorPoolConfig& config, std::uint64_t seed) {
  if (config.n_annotators == 0) throw DataError("annotator pool: need at least one annotator");
  if (!(config.error_min >= 0.0 && config.error_min <= config.error_max && config.error_max <= 1.0)) {
    throw DataError("annotator pool: error range must satisfy 0 <= min <= max <= 1");
  }
  if (!(config.chasing_min > 0.0 && config.chasing_min <= config.chasing_max)) {
    throw DataError("annotator pool: chasing weights must be positive");
  }
  const Kernel kernel = make_kernel(config.kernel);
  std::vector<AnnotatorProfile> pool;
  pool.reserve(config.n_annotators);
  for (std::size_t a = 0; a < config.n_annotators; ++a) {
    std::mt19937_64 rng(derive_seed(seed, a));
    AnnotatorProfile p;
    char id[16];
    std::snprintf(id, sizeof id, "ann%02zu", a);
    p.annotator_id = id;
    p.error_rate = uniform(rng, config.error_min, config.error_max);
    p.kernel = kernel;
    for (double& w : p.chasing) w = uniform(rng, config.chasing_min, config.chasing_max);
    pool.push_back(std::move(p));
  }
  return pool;
}

void validate(const SynthConfig& config) {
  if (config.height == 0 || config.width == 0) throw DataError("synth: image size must be non-zero");
  if (!(config.degradation >= 0.0 && config.degradation <= 1.0)) {
    throw DataError("synth: degradation must lie in [0, 1]");
  }
  if (!(config.mean_annotations > 0.0)) throw DataError("synth: annotation mean must be > 0");
  if (!(config.damage_gain >= 0.0)) throw DataError("synth: damage gain must be >= 0");
  double s = 0.0;
  for (double v : config.proportions) {
    if (!(v >= 0.0)) throw DataError("synth: class proportions must be non-negative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw DataError("synth: class proportions must sum to 1");
}

std::size_t glyph_stroke_count(ClassId c) { return templates()[c.index()].size(); }

RenderedGlyph render_glyph(ClassId c, std::uint32_t height, std::uint32_t width, double degradation,
                           std::uint64_t seed, std::string image_id) {
  if (height == 0 || width == 0) throw DataError("render_glyph: image size must be non-zero");
  std::mt19937_64 rng(seed);
  const double angle = uniform(rng, -10.0, 10.0) * kPi / 180.0;
  const double scale = uniform(rng, 0.85, 1.1);
  const double shift_x = uniform(rng, -0.06, 0.06);
  const double shift_y = uniform(rng, -0.06, 0.06);
  const double half_width = uniform(rng, 0.035, 0.06);
  const double background = uniform(rng, 10.0, 40.0);
  const double fade = 1.0 - degradation * uniform(rng, 0.0, 0.6);
  const double ink = uniform(rng, 180.0, 255.0) * fade;
  const double drop_p = degradation * 0.15;

  const double ca = std::cos(angle) * scale;
  const double sa = std::sin(angle) * scale;
  auto place = [&](Point p) {
    const double x = p.x - 0.5;
    const double y = p.y - 0.5;
    return Point{0.5 + ca * x - sa * y + shift_x, 0.5 + sa * x + ca * y + shift_y};
  };

  struct Segment {
    Point a;
    Point b;
    bool kept;
  };
  std::vector<Segment> segments;
  std::size_t n_kept = 0;
  for (const auto& stroke : templates()[c.index()]) {
    for (std::size_t i = 0; i + 1 < stroke.size(); ++i) {
      const bool kept = uniform01(rng) >= drop_p;
      segments.push_back({place(stroke[i]), place(stroke[i + 1]), kept});
      n_kept += kept ? 1 : 0;
    }
  }
  if (n_kept == 0) segments.front().kept = true;

  std::vector<Disk> holes;
  if (degradation > 0.0) {
    const auto n_holes = poisson_draw(2.0 * degradation, rng);
    for (std::uint32_t h = 0; h < n_holes; ++h) {
      holes.push_back({{uniform01(rng), uniform01(rng)}, uniform(rng, 0.05, 0.15)});
    }
  }
  const double noise_sd = degradation * 0.1 * 255.0;
  const double aa = 0.5 / static_cast<double>(std::max(height, width));
  auto coverage_at = [&](double d) { return std::clamp((half_width + aa - d) / (2.0 * aa), 0.0, 1.0); };

  RenderedGlyph out;
  GlyphImage& img = out.image;
  img.image_id = std::move(image_id);
  img.height = height;
  img.width = width;
  img.pixels.resize(static_cast<std::size_t>(height) * width);
  double intact = 0.0;
  double visible = 0.0;
  for (std::uint32_t i = 0; i < height; ++i) {
    for (std::uint32_t j = 0; j < width; ++j) {
      const Point p{(j + 0.5) / width, (i + 0.5) / height};
      double d_all = 1e9;
      double d_kept = 1e9;
      for (const auto& s : segments) {
        const double d = segment_distance(p, s.a, s.b);
        d_all = std::min(d_all, d);
        if (s.kept) d_kept = std::min(d_kept, d);
      }
      double coverage = coverage_at(d_kept);
      intact += coverage_at(d_all);
      bool in_hole = false;
      for (const auto& hole : holes) {
        const double dx = p.x - hole.c.x;
        const double dy = p.y - hole.c.y;
        if (dx * dx + dy * dy < hole.r * hole.r) in_hole = true;
      }
      double v = background + (ink - background) * coverage;
      if (in_hole) {
        v = background * 0.5;
        coverage = 0.0;
      }
      visible += coverage;
      if (noise_sd > 0.0) v += noise_sd * normal(rng);
      img.pixels[static_cast<std::size_t>(i) * width + j] =
          static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  out.damage = intact > 0.0 ? std::clamp(1.0 - fade * visible / intact, 0.0, 1.0) : 0.0;
  return out;
}

SyntheticImages generate_images(const SynthConfig& config) {
  validate(config);
  const std::uint64_t base = derive_seed(config.seed, "synth.images");
  SyntheticImages out;
  out.images.reserve(config.n_images);
  out.truths.reserve(config.n_images);
  out.damage.reserve(config.n_images);
  for (std::size_t i = 0; i < config.n_images; ++i) {
    std::mt19937_64 rng(derive_seed(base, i));
    const ClassId c(categorical(config.proportions.data(), kNumClasses, rng));
    char id[24];
    std::snprintf(id, sizeof id, "img%06zu", i);
    auto glyph = render_glyph(c, config.height, config.width, config.degradation, rng(), id);
    out.images.push_back(std::move(glyph.image));
    out.truths.push_back(c);
    out.damage.push_back(glyph.damage);
  }
  return out;
}

std::uint32_t poisson_draw(double mean, std::mt19937_64& rng) {
  if (!(mean > 0.0)) return 0;
  // exp(-mean) underflows for large means; a sum of Poisson draws is Poisson
  // in the summed mean, so draw in chunks small enough for the product.
  constexpr double kChunk = 30.0;
  std::uint32_t total = 0;
  while (mean > 0.0) {
    const double part = std::min(mean, kChunk);
    mean -= part;
    const double limit = std::exp(-part);
    double prod = uniform01(rng);
    while (prod > limit) {
      ++total;
      prod *= uniform01(rng);
    }
  }
  return total;
}

std::vector<AnnotationRecord> simulate_annotations(const std::vector<std::string>& image_ids,
                                                   const std::vector<ClassId>& truths,
                                                   const std::vector<AnnotatorProfile>& profiles,
                                                   double mean_annotations, std::uint64_t seed,
                                                   const DamageCoupling& coupling) {
  if (profiles.empty()) throw DataError("simulate_annotations: need at least one annotator profile");
  if (image_ids.size() != truths.size()) throw DataError("simulate_annotations: ids and truths differ in length");
  if (!coupling.damage.empty() && coupling.damage.size() != image_ids.size()) {
    throw DataError("simulate_annotations: damage scores and ids differ in length");
  }
  const std::uint64_t base = derive_seed(seed, "synth.annotations");
  std::vector<double> weights(profiles.size());
  std::vector<AnnotationRecord> out;
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    std::mt19937_64 rng(derive_seed(base, i));
    const std::size_t truth = truths[i].index();
    for (std::size_t a = 0; a < profiles.size(); ++a) weights[a] = profiles[a].chasing[truth];
    const double boost = coupling.damage.empty() ? 1.0 : 1.0 + coupling.gain * coupling.damage[i];
    const std::uint32_t n = std::max<std::uint32_t>(1, poisson_draw(mean_annotations, rng));
    for (std::uint32_t v = 0; v < n; ++v) {
      const auto& who = profiles[categorical(weights.data(), weights.size(), rng)];
      std::size_t label = truth;
      if (uniform01(rng) < std::min(1.0, who.error_rate * boost)) label = categorical(who.kernel[truth].data(), kNumClasses, rng);
      out.push_back({image_ids[i], who.annotator_id, ClassId(label)});
    }
  }
  return out;
}

double TruthDiagnostics::agreement() const {
  return n_images == 0 ? 0.0 : static_cast<double>(n_agree) / static_cast<double>(n_images);
}

TruthDiagnostics truth_diagnostics(const std::map<std::string, ClassId>& truths, const std::vector<HsmRecord>& hsm) {
  if (truths.size() != hsm.size()) {
    throw DataError("truth_diagnostics: " + std::to_string(truths.size()) + " truths for " +
                    std::to_string(hsm.size()) + " HSM records");
  }
  TruthDiagnostics d;
  for (const auto& r : hsm) {
    const auto it = truths.find(r.image_id);
    if (it == truths.end()) throw DataError("truth_diagnostics: no truth for " + r.image_id);
    ++d.confusion[it->second.index()][r.consensus.index()];
    ++d.n_images;
    if (it->second == r.consensus) ++d.n_agree;
  }
  return d;
}

std::string truth_diagnostics_csv(const TruthDiagnostics& d) {
  std::string out = "truth,consensus,count\n";
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (d.confusion[t][c] == 0) continue;
      out += class_name(t) + ',' + class_name(c) + ',' + std::to_string(d.confusion[t][c]) + '\n';
    }
  }
  out += "agreement," + std::to_string(d.n_agree) + '/' + std::to_string(d.n_images) + ',' +
         format_prob(d.agreement()) + '\n';
  return out;
}

}  // namespace hsmstack
