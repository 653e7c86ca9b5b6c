#pragma once

// Canonical data model and line-oriented / binary file formats shared by
// every pipeline stage.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hsmstack {

inline constexpr std::size_t kNumClasses = 24;

/// Error raised for malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index into the ordered Greek alphabet (0 = Alpha ... 23 = Omega).
class ClassId {
 public:
  constexpr ClassId() = default;
  explicit ClassId(std::size_t index);

  [[nodiscard]] constexpr std::size_t index() const { return index_; }
  friend constexpr bool operator==(ClassId, ClassId) = default;
  friend constexpr auto operator<=>(ClassId, ClassId) = default;

 private:
  std::size_t index_ = 0;
};

[[nodiscard]] const std::string& class_name(ClassId c);
[[nodiscard]] const std::string& class_name(std::size_t index);
/// Inverse of class_name. Throws DataError naming the token when unknown.
[[nodiscard]] ClassId class_from_name(std::string_view name);
[[nodiscard]] const std::array<std::string, kNumClasses>& class_names();

using CountVector = std::array<std::uint32_t, kNumClasses>;

struct AnnotationRecord {
  std::string image_id;
  std::string annotator_id;  // may be empty
  ClassId label;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// Row-major grayscale crop.
struct GlyphImage {
  std::string image_id;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const GlyphImage&, const GlyphImage&) = default;
};

enum class ModelTag { kCxe, kKld, kKnn };

[[nodiscard]] std::string_view model_tag_name(ModelTag tag);
[[nodiscard]] ModelTag model_tag_from_name(std::string_view name);

struct Prediction {
  std::string image_id;
  ModelTag model = ModelTag::kCxe;
  std::array<double, kNumClasses> probs{};
};

/// Argmax with lowest-index tie-break.
[[nodiscard]] ClassId argmax_class(const std::array<double, kNumClasses>& probs);

// --- annotations ---------------------------------------------------------

/// Parses `image_id,annotator_id,class_name` lines; `#` lines and blank lines
/// are skipped. Errors carry the 1-based line number.
[[nodiscard]] std::vector<AnnotationRecord> parse_annotations(std::string_view text);
[[nodiscard]] std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
void store_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records,
                       std::string_view header_comment = {});

/// Per-image vote tallies. Keys are ordered so iteration is deterministic.
[[nodiscard]] std::map<std::string, CountVector> count_annotations(const std::vector<AnnotationRecord>& records);

// --- images --------------------------------------------------------------

/// Binary container: "GLY1", then big-endian u32 count, height, width, then
/// count*height*width raw bytes. Image ids are not part of the container; they
/// live in a manifest next to it (one id per line, same order).
[[nodiscard]] std::vector<std::uint8_t> encode_images(const std::vector<GlyphImage>& images);
[[nodiscard]] std::vector<GlyphImage> decode_images(std::span<const std::uint8_t> bytes,
                                                    const std::vector<std::string>& ids);
void store_images(const std::filesystem::path& path, const std::vector<GlyphImage>& images);
[[nodiscard]] std::vector<GlyphImage> load_images(const std::filesystem::path& path);
[[nodiscard]] std::filesystem::path manifest_path(const std::filesystem::path& container);

// --- predictions ---------------------------------------------------------

void store_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds,
                       std::string_view header_comment = {});
[[nodiscard]] std::vector<Prediction> load_predictions(const std::filesystem::path& path);

/// `%.9g` formatting used by every probability column.
[[nodiscard]] std::string format_prob(double value);

// --- truth file (synthetic data only) ------------------------------------

void store_truth(const std::filesystem::path& path, const std::vector<std::string>& ids,
                 const std::vector<ClassId>& truths, std::string_view header_comment = {});
[[nodiscard]] std::map<std::string, ClassId> load_truth(const std::filesystem::path& path);

// --- small helpers shared by the text formats ----------------------------

[[nodiscard]] std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
[[nodiscard]] std::vector<std::string_view> split(std::string_view line, char sep);
[[nodiscard]] double parse_double(std::string_view token, std::string_view what);
[[nodiscard]] long long parse_int(std::string_view token, std::string_view what);
/// Prefixes every line of `comment` with "# " (no-op when empty).
[[nodiscard]] std::string comment_block(std::string_view comment);

}  // namespace hsmstack
