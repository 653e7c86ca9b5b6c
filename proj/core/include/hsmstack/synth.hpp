#pragma once

// Synthetic stand-in for a crowdsourced papyrus-character corpus: stroke
// template glyphs with seeded jitter and damage, and a pool of simulated
// annotators that err and favor particular characters.

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hsmstack/hsm.hpp"

namespace hsmstack {

/// Per-character counts of the Ancient Lives letter corpus (399,421 crops).
[[nodiscard]] const std::array<std::uint32_t, kNumClasses>& corpus_letter_counts();
/// corpus_letter_counts() normalized to sum to 1.
[[nodiscard]] ProbVector default_class_proportions();

using Kernel = std::array<ProbVector, kNumClasses>;

enum class KernelKind { kConfusable, kUniform };

/// Row-stochastic error kernel. kConfusable has a zero diagonal, mass on
/// alphabet neighbors and on hand-picked look-alike pairs, plus a small floor.
[[nodiscard]] Kernel make_kernel(KernelKind kind);

struct AnnotatorProfile {
  std::string annotator_id;
  double error_rate = 0.0;  // probability of not voting the true class
  Kernel kernel{};
  std::array<double, kNumClasses> chasing{};  // preference per true class, > 0
};

struct AnnotatorPoolConfig {
  std::size_t n_annotators = 50;
  double error_min = 0.05;
  double error_max = 0.4;
  double chasing_min = 0.5;
  double chasing_max = 1.5;
  KernelKind kernel = KernelKind::kConfusable;
};

[[nodiscard]] std::vector<AnnotatorProfile> make_annotator_pool(const AnnotatorPoolConfig& config, std::uint64_t seed);

struct SynthConfig {
  std::size_t n_images = 5000;
  ProbVector proportions = default_class_proportions();
  std::uint32_t height = 28;
  std::uint32_t width = 28;
  double degradation = 0.45;      // in [0, 1]
  double mean_annotations = 8.0;  // Poisson mean, floored at one vote
  double damage_gain = 3.0;       // see DamageCoupling
  std::uint64_t seed = 1;
};

/// Throws DataError on zero image size, degradation outside [0,1], negative or
/// non-normalized proportions, or a non-positive annotation mean.
void validate(const SynthConfig& config);

struct SyntheticImages {
  std::vector<GlyphImage> images;
  std::vector<ClassId> truths;
  std::vector<double> damage;  // per image, see RenderedGlyph
};

/// Image i uses only a seed derived from (config.seed, i).
[[nodiscard]] SyntheticImages generate_images(const SynthConfig& config);

struct RenderedGlyph {
  GlyphImage image;
  /// 1 - (visible ink / intact ink): share of the glyph lost to fading,
  /// dropped strokes and holes. 0 for an undamaged render.
  double damage = 0.0;
};

/// Renders a single glyph; exposed for tests and benchmarks.
[[nodiscard]] RenderedGlyph render_glyph(ClassId c, std::uint32_t height, std::uint32_t width, double degradation,
                                         std::uint64_t seed, std::string image_id = {});

/// Number of strokes in a class template (tests use it for coverage checks).
[[nodiscard]] std::size_t glyph_stroke_count(ClassId c);

struct DamageCoupling {
  std::vector<double> damage;  // empty, or one value in [0,1] per image
  double gain = 0.0;
};

/// With a coupling, an annotator's error rate on image i becomes
/// min(1, e * (1 + gain * damage[i])), so damaged crops collect noisier votes
/// while an error-free annotator stays error-free.
[[nodiscard]] std::vector<AnnotationRecord> simulate_annotations(const std::vector<std::string>& image_ids,
                                                                 const std::vector<ClassId>& truths,
                                                                 const std::vector<AnnotatorProfile>& profiles,
                                                                 double mean_annotations, std::uint64_t seed,
                                                                 const DamageCoupling& coupling = {});

/// Knuth's method, applied in chunks of mean <= 30 so large means stay exact.
[[nodiscard]] std::uint32_t poisson_draw(double mean, std::mt19937_64& rng);

struct TruthDiagnostics {
  // counts[truth][consensus]
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> confusion{};
  std::size_t n_images = 0;
  std::size_t n_agree = 0;
  [[nodiscard]] double agreement() const;
};

/// Throws DataError when ids of the two inputs differ.
[[nodiscard]] TruthDiagnostics truth_diagnostics(const std::map<std::string, ClassId>& truths,
                                                 const std::vector<HsmRecord>& hsm);

/// `truth,consensus,count` for the non-zero cells, then an `agreement` line.
[[nodiscard]] std::string truth_diagnostics_csv(const TruthDiagnostics& d);

}  // namespace hsmstack
