#include "hsmstack/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hsmstack {

namespace {

const std::array<std::string, kNumClasses> kClassNames = {
    "Alpha", "Beta",    "Gamma", "Delta", "Epsilon", "Zeta", "Eta",     "Theta",
    "Iota",  "Kappa",   "Lambda", "Mu",   "Nu",      "Xi",   "Omicron", "Pi",
    "Rho",   "Sigma",   "Tau",   "Upsilon", "Phi",   "Chi",  "Psi",     "Omega"};

constexpr std::array<char, 4> kImageMagic = {'G', 'L', 'Y', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Calls fn(line_number, line) for each non-blank, non-comment line.
template <typename Fn>
void for_each_data_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    fn(line_no, line);
  }
}

}  // namespace

ClassId::ClassId(std::size_t index) : index_(index) {
  if (index >= kNumClasses) {
    throw DataError("class index " + std::to_string(index) + " out of range [0, 24)");
  }
}

const std::string& class_name(ClassId c) { return kClassNames[c.index()]; }

const std::string& class_name(std::size_t index) { return class_name(ClassId(index)); }

ClassId class_from_name(std::string_view name) {
  const auto it = std::find(kClassNames.begin(), kClassNames.end(), name);
  if (it == kClassNames.end()) throw DataError("unknown class name \"" + std::string(name) + "\"");
  return ClassId(static_cast<std::size_t>(it - kClassNames.begin()));
}

const std::array<std::string, kNumClasses>& class_names() { return kClassNames; }

std::string_view model_tag_name(ModelTag tag) {
  switch (tag) {
    case ModelTag::kCxe: return "CXE";
    case ModelTag::kKld: return "KLD";
    case ModelTag::kKnn: return "KNN";
  }
  return "?";
}

ModelTag model_tag_from_name(std::string_view name) {
  if (name == "CXE") return ModelTag::kCxe;
  if (name == "KLD") return ModelTag::kKld;
  if (name == "KNN") return ModelTag::kKnn;
  throw DataError("unknown model tag \"" + std::string(name) + "\"");
}

ClassId argmax_class(const std::array<double, kNumClasses>& probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return ClassId(best);
}

// --- text helpers ----------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("short write to " + path.string());
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(std::string_view token, std::string_view what) {
  token = trim(token);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw DataError("invalid number \"" + std::string(token) + "\" for " + std::string(what));
  }
  return v;
}

long long parse_int(std::string_view token, std::string_view what) {
  token = trim(token);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw DataError("invalid integer \"" + std::string(token) + "\" for " + std::string(what));
  }
  return v;
}

std::string comment_block(std::string_view comment) {
  std::string out;
  if (comment.empty()) return out;
  for (auto line : split(comment, '\n')) {
    if (line.empty()) continue;
    out += "# ";
    out += line;
    out += '\n';
  }
  return out;
}

std::string format_prob(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

// --- annotations -----------------------------------------------------------

std::vector<AnnotationRecord> parse_annotations(std::string_view text) {
  std::vector<AnnotationRecord> records;
  for_each_data_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = split(line, ',');
    if (fields.size() != 3) {
      throw DataError("annotations line " + std::to_string(line_no) + ": expected 3 fields, got " +
                      std::to_string(fields.size()));
    }
    const auto image_id = trim(fields[0]);
    if (image_id.empty()) throw DataError("annotations line " + std::to_string(line_no) + ": empty image_id");
    AnnotationRecord rec;
    rec.image_id = std::string(image_id);
    rec.annotator_id = std::string(trim(fields[1]));
    try {
      rec.label = class_from_name(trim(fields[2]));
    } catch (const DataError& e) {
      throw DataError("annotations line " + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  });
  return records;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_text_file(path));
}

void store_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records,
                       std::string_view header_comment) {
  std::string text = comment_block(header_comment);
  for (const auto& r : records) {
    text += r.image_id;
    text += ',';
    text += r.annotator_id;
    text += ',';
    text += class_name(r.label);
    text += '\n';
  }
  write_text_file(path, text);
}

std::map<std::string, CountVector> count_annotations(const std::vector<AnnotationRecord>& records) {
  std::map<std::string, CountVector> counts;
  for (const auto& r : records) {
    auto [it, inserted] = counts.try_emplace(r.image_id);
    if (inserted) it->second.fill(0);
    ++it->second[r.label.index()];
  }
  return counts;
}

// --- images ----------------------------------------------------------------

std::vector<std::uint8_t> encode_images(const std::vector<GlyphImage>& images) {
  const std::uint32_t h = images.empty() ? 0 : images.front().height;
  const std::uint32_t w = images.empty() ? 0 : images.front().width;
  std::vector<std::uint8_t> out(kImageMagic.begin(), kImageMagic.end());
  out.reserve(16 + images.size() * std::size_t{h} * w);
  put_u32(out, static_cast<std::uint32_t>(images.size()));
  put_u32(out, h);
  put_u32(out, w);
  for (const auto& img : images) {
    if (img.height != h || img.width != w) {
      throw DataError("image " + img.image_id + " has inconsistent dimensions");
    }
    if (img.pixels.size() != std::size_t{h} * w) {
      throw DataError("image " + img.image_id + " pixel count does not match height*width");
    }
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  }
  return out;
}

std::vector<GlyphImage> decode_images(std::span<const std::uint8_t> bytes, const std::vector<std::string>& ids) {
  if (bytes.size() < 16 || !std::equal(kImageMagic.begin(), kImageMagic.end(), bytes.begin())) {
    throw DataError("image container: bad magic (expected GLY1)");
  }
  const std::uint32_t count = get_u32(bytes, 4);
  const std::uint32_t h = get_u32(bytes, 8);
  const std::uint32_t w = get_u32(bytes, 12);
  const std::size_t per_image = std::size_t{h} * w;
  if (bytes.size() != 16 + per_image * count) {
    throw DataError("image container: truncated payload (" + std::to_string(bytes.size() - 16) + " of " +
                    std::to_string(per_image * count) + " bytes)");
  }
  if (ids.size() != count) {
    throw DataError("image manifest lists " + std::to_string(ids.size()) + " ids for " + std::to_string(count) +
                    " images");
  }
  std::vector<GlyphImage> images(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& img = images[i];
    img.image_id = ids[i];
    img.height = h;
    img.width = w;
    const auto* first = bytes.data() + 16 + per_image * i;
    img.pixels.assign(first, first + per_image);
  }
  return images;
}

std::filesystem::path manifest_path(const std::filesystem::path& container) {
  auto p = container;
  p += ".ids";
  return p;
}

void store_images(const std::filesystem::path& path, const std::vector<GlyphImage>& images) {
  const auto bytes = encode_images(images);
  write_text_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  std::string manifest;
  for (const auto& img : images) {
    manifest += img.image_id;
    manifest += '\n';
  }
  write_text_file(manifest_path(path), manifest);
}

std::vector<GlyphImage> load_images(const std::filesystem::path& path) {
  const std::string raw = read_text_file(path);
  std::vector<std::string> ids;
  for_each_data_line(read_text_file(manifest_path(path)),
                     [&](std::size_t, std::string_view line) { ids.emplace_back(line); });
  return decode_images(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()), ids);
}

// --- predictions -----------------------------------------------------------

void store_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds,
                       std::string_view header_comment) {
  std::string text = comment_block(header_comment);
  for (const auto& p : preds) {
    text += p.image_id;
    text += ',';
    text += model_tag_name(p.model);
    for (double v : p.probs) {
      text += ',';
      text += format_prob(v);
    }
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> preds;
  for_each_data_line(read_text_file(path), [&](std::size_t line_no, std::string_view line) {
    const auto fields = split(line, ',');
    const std::string where = path.filename().string() + " line " + std::to_string(line_no);
    if (fields.size() != 2 + kNumClasses) throw DataError(where + ": expected 26 fields");
    Prediction p;
    p.image_id = std::string(trim(fields[0]));
    p.model = model_tag_from_name(trim(fields[1]));
    double sum = 0.0;
    for (std::size_t i = 0; i < kNumClasses; ++i) {
      p.probs[i] = parse_double(fields[2 + i], where);
      if (!(p.probs[i] >= 0.0)) throw DataError(where + ": negative probability");
      sum += p.probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DataError(where + ": probabilities do not sum to 1");
    preds.push_back(std::move(p));
  });
  return preds;
}

// --- truth -----------------------------------------------------------------

void store_truth(const std::filesystem::path& path, const std::vector<std::string>& ids,
                 const std::vector<ClassId>& truths, std::string_view header_comment) {
  if (ids.size() != truths.size()) throw DataError("truth ids/classes length mismatch");
  std::string text = comment_block(header_comment);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    text += ids[i];
    text += ',';
    text += class_name(truths[i]);
    text += '\n';
  }
  write_text_file(path, text);
}

std::map<std::string, ClassId> load_truth(const std::filesystem::path& path) {
  std::map<std::string, ClassId> truth;
  for_each_data_line(read_text_file(path), [&](std::size_t line_no, std::string_view line) {
    const auto fields = split(line, ',');
    if (fields.size() != 2) throw DataError("truth line " + std::to_string(line_no) + ": expected 2 fields");
    truth[std::string(trim(fields[0]))] = class_from_name(trim(fields[1]));
  });
  return truth;
}

}  // namespace hsmstack
