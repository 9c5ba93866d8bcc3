#ifndef MICRONET_DATA_HPP
#define MICRONET_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "micronet/errors.hpp"
#include "micronet/rng.hpp"
#include "micronet/tensor.hpp"

namespace micronet {

// One image/label pair: RGB image scaled to [0,1] and a per-pixel category
// map (0 = background, 1 = building), plus where the patch came from.
struct LabeledPatch {
  Tensor<float> image;          // (1, 3, H, W)
  std::vector<uint8_t> label;   // H*W entries in {0, 1}
  std::string source;
  int row = 0, col = 0;

  int64_t height() const { return image.h(); }
  int64_t width() const { return image.w(); }

  std::string id() const {
    return source + "_r" + std::to_string(row) + "_c" + std::to_string(col);
  }
};

// ---------------------------------------------------------------------------
// Binary portable pixmap (P6) / graymap (P5) IO. maxval must be 255.

namespace detail {

inline int pnm_token(std::istream& is, const std::string& path) {
  // Skips whitespace and '#' comments, then reads one non-negative integer.
  int ch = is.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = is.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = is.get();
  }
  if (ch == EOF || !std::isdigit(ch)) {
    throw ParseError("expected integer in header at byte offset " +
                     std::to_string(static_cast<long long>(is.tellg()) - 1) + ": " + path);
  }
  int value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = is.get();
  }
  return value;
}

}  // namespace detail

// Reads a binary P6 pixmap into a (1, 3, H, W) tensor scaled to [0,1].
inline Tensor<float> load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '6') throw ParseError("not a binary P6 pixmap (byte offset 0): " + path);
  const int w = detail::pnm_token(is, path);
  const int h = detail::pnm_token(is, path);
  const int maxval = detail::pnm_token(is, path);
  if (maxval != 255) {
    throw ParseError("unsupported maxval " + std::to_string(maxval) + " (only 255): " + path);
  }
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ParseError("truncated pixel data at byte offset " +
                     std::to_string(static_cast<long long>(is.tellg())) + ": " + path);
  }
  Tensor<float> img(1, 3, h, w);
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      img[c * static_cast<int64_t>(h) * w + i] = static_cast<float>(raw[i * 3 + c]) / 255.0f;
    }
  }
  return img;
}

inline void save_ppm(const std::string& path, const Tensor<float>& img) {
  if (img.n() != 1 || img.c() != 3) throw ShapeError("save_ppm expects a (1,3,H,W) tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P6\n" << img.w() << " " << img.h() << "\n255\n";
  const int64_t hw = img.h() * img.w();
  std::vector<uint8_t> raw(static_cast<size_t>(hw) * 3);
  for (int64_t i = 0; i < hw; ++i) {
    for (int c = 0; c < 3; ++c) {
      float v = std::clamp(img[c * hw + i], 0.0f, 1.0f);
      raw[i * 3 + c] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("write failed: " + path);
}

// Reads a binary P5 graymap as a category map: 0 -> 0, 255 -> 1.
inline std::vector<uint8_t> load_pgm(const std::string& path, int64_t* out_h, int64_t* out_w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
  if (m0 != 'P' || m1 != '5') throw ParseError("not a binary P5 graymap (byte offset 0): " + path);
  const int w = detail::pnm_token(is, path);
  const int h = detail::pnm_token(is, path);
  const int maxval = detail::pnm_token(is, path);
  if (maxval != 255) {
    throw ParseError("unsupported maxval " + std::to_string(maxval) + " (only 255): " + path);
  }
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw ParseError("truncated pixel data at byte offset " +
                     std::to_string(static_cast<long long>(is.tellg())) + ": " + path);
  }
  for (auto& v : raw) v = v >= 128 ? 1 : 0;
  if (out_h) *out_h = h;
  if (out_w) *out_w = w;
  return raw;
}

inline void save_pgm(const std::string& path, const std::vector<uint8_t>& labels, int64_t h,
                     int64_t w) {
  if (static_cast<int64_t>(labels.size()) != h * w) {
    throw ShapeError("save_pgm: label count does not match H*W");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> raw(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) raw[i] = labels[i] ? 255 : 0;
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Patch cutting and augmentation

// Non-overlapping grid of patches in row-major order. Dims must divide evenly;
// no partial patches.
inline std::vector<LabeledPatch> cut_patches(const Tensor<float>& image,
                                             const std::vector<uint8_t>& label, int64_t patch,
                                             const std::string& source) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("cut_patches expects a (1,3,H,W) image");
  if (static_cast<int64_t>(label.size()) != image.h() * image.w()) {
    throw ShapeError("cut_patches: label dims do not match image dims");
  }
  if (image.h() % patch != 0) {
    throw ShapeError("height axis " + std::to_string(image.h()) + " not divisible by patch size " +
                     std::to_string(patch));
  }
  if (image.w() % patch != 0) {
    throw ShapeError("width axis " + std::to_string(image.w()) + " not divisible by patch size " +
                     std::to_string(patch));
  }
  const int64_t rows = image.h() / patch, cols = image.w() / patch;
  std::vector<LabeledPatch> patches;
  patches.reserve(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) {
      LabeledPatch p;
      p.image = Tensor<float>(1, 3, patch, patch);
      p.label.resize(static_cast<size_t>(patch * patch));
      p.source = source;
      p.row = static_cast<int>(r);
      p.col = static_cast<int>(c);
      for (int64_t ch = 0; ch < 3; ++ch) {
        for (int64_t i = 0; i < patch; ++i) {
          const float* src = image.data() + (ch * image.h() + r * patch + i) * image.w() +
                             c * patch;
          std::copy(src, src + patch, p.image.data() + (ch * patch + i) * patch);
        }
      }
      for (int64_t i = 0; i < patch; ++i) {
        std::copy(label.begin() + (r * patch + i) * image.w() + c * patch,
                  label.begin() + (r * patch + i) * image.w() + c * patch + patch,
                  p.label.begin() + i * patch);
      }
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

// Stitches a row-major patch grid back together (the cut_patches inverse).
inline void reassemble(const std::vector<LabeledPatch>& patches, int64_t rows, int64_t cols,
                       Tensor<float>* image, std::vector<uint8_t>* label) {
  const int64_t patch = patches.front().height();
  *image = Tensor<float>(1, 3, rows * patch, cols * patch);
  label->assign(static_cast<size_t>(rows * patch * cols * patch), 0);
  for (const auto& p : patches) {
    for (int64_t ch = 0; ch < 3; ++ch) {
      for (int64_t i = 0; i < patch; ++i) {
        std::copy(p.image.data() + (ch * patch + i) * patch,
                  p.image.data() + (ch * patch + i) * patch + patch,
                  image->data() + (ch * image->h() + p.row * patch + i) * image->w() +
                      p.col * patch);
      }
    }
    for (int64_t i = 0; i < patch; ++i) {
      std::copy(p.label.begin() + i * patch, p.label.begin() + (i + 1) * patch,
                label->begin() + (p.row * patch + i) * image->w() + p.col * patch);
    }
  }
}

// Mirrors image and label along the width axis.
inline LabeledPatch hflip(const LabeledPatch& p) {
  LabeledPatch f = p;
  const int64_t h = p.height(), w = p.width();
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < h; ++i) {
      float* row = f.image.data() + (c * h + i) * w;
      std::reverse(row, row + w);
    }
  }
  for (int64_t i = 0; i < h; ++i) {
    std::reverse(f.label.begin() + i * w, f.label.begin() + (i + 1) * w);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Manifest and split

enum class Split { Train, Val };

struct ManifestEntry {
  std::string id;
  std::string source;
  int row = 0, col = 0;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  uint64_t seed = 0;
};

// Seeded shuffle then prefix split; train fraction honored within one patch.
inline void split_manifest(DatasetManifest& manifest, double fraction, uint64_t seed) {
  if (manifest.entries.size() < 2) {
    throw ValidationError("need at least 2 patches to split, got " +
                          std::to_string(manifest.entries.size()));
  }
  manifest.seed = seed;
  std::vector<size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed(seed, static_cast<uint64_t>(SeedStream::Data)));
  rng.shuffle(order);
  const size_t n_train =
      static_cast<size_t>(std::llround(fraction * static_cast<double>(order.size())));
  for (size_t k = 0; k < order.size(); ++k) {
    manifest.entries[order[k]].split = k < n_train ? Split::Train : Split::Val;
  }
}

inline std::string manifest_csv(const DatasetManifest& m) {
  std::ostringstream os;
  os << "patch_id,source,row,col,split\n";
  for (const auto& e : m.entries) {
    os << e.id << "," << e.source << "," << e.row << "," << e.col << ","
       << (e.split == Split::Train ? "train" : "val") << "\n";
  }
  return os.str();
}

inline DatasetManifest parse_manifest_csv(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("patch_id,", 0) != 0) {
    throw ParseError("manifest missing header line");
  }
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string field;
    std::string split_name;
    if (!std::getline(ls, e.id, ',') || !std::getline(ls, e.source, ',') ||
        !std::getline(ls, field, ',')) {
      throw ParseError("malformed manifest line " + std::to_string(lineno));
    }
    e.row = std::stoi(field);
    if (!std::getline(ls, field, ',') || !std::getline(ls, split_name)) {
      throw ParseError("malformed manifest line " + std::to_string(lineno));
    }
    e.col = std::stoi(field);
    if (split_name == "train") e.split = Split::Train;
    else if (split_name == "val") e.split = Split::Val;
    else throw ParseError("unknown split '" + split_name + "' on line " + std::to_string(lineno));
    m.entries.push_back(std::move(e));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic aerial-style data

// Textured background plus 1-6 axis-aligned bright rectangles ("buildings");
// the label is the rectangle mask. Building pixel fraction lands in [5%, 40%]
// and every label contains both classes. Deterministic under the seed.
inline std::vector<LabeledPatch> gen_synthetic(int count, int64_t size, uint64_t seed) {
  if (size % 4 != 0) throw ParamError("synthetic patch size must be divisible by 4");
  std::vector<LabeledPatch> out;
  out.reserve(static_cast<size_t>(count));
  for (int s = 0; s < count; ++s) {
    Rng rng(split_seed(seed, 1000 + static_cast<uint64_t>(s)));
    LabeledPatch p;
    p.source = "synthetic";
    p.row = s;
    p.col = 0;
    p.image = Tensor<float>(1, 3, size, size);
    p.label.assign(static_cast<size_t>(size * size), 0);

    // Background: per-channel base tone with texture noise and a mild
    // horizontal gradient.
    float base[3];
    for (int c = 0; c < 3; ++c) base[c] = static_cast<float>(rng.uniform(0.15, 0.40));
    const float grad = static_cast<float>(rng.uniform(-0.05, 0.05));
    for (int64_t i = 0; i < size; ++i) {
      for (int64_t j = 0; j < size; ++j) {
        const float noise = static_cast<float>(rng.uniform(-0.06, 0.06));
        const float g = grad * static_cast<float>(j) / static_cast<float>(size);
        for (int c = 0; c < 3; ++c) {
          p.image[(c * size + i) * size + j] = std::clamp(base[c] + noise + g, 0.0f, 1.0f);
        }
      }
    }

    // Buildings: bright rectangles of a distinct intensity band.
    const int target_rects = static_cast<int>(rng.uniform_int(1, 6));
    const double max_fraction = 0.40;
    const double min_fraction = 0.05;
    int64_t building_pixels = 0;
    const int64_t total = size * size;
    int placed = 0;
    int attempts = 0;
    while ((placed < target_rects ||
            building_pixels < static_cast<int64_t>(min_fraction * total)) &&
           attempts < 200) {
      ++attempts;
      const int64_t rw = rng.uniform_int(size / 8, size / 3);
      const int64_t rh = rng.uniform_int(size / 8, size / 3);
      const int64_t ri = rng.uniform_int(1, size - rh - 1);
      const int64_t rj = rng.uniform_int(1, size - rw - 1);
      int64_t fresh = 0;
      for (int64_t i = ri; i < ri + rh; ++i) {
        for (int64_t j = rj; j < rj + rw; ++j) {
          if (!p.label[i * size + j]) ++fresh;
        }
      }
      if (building_pixels + fresh > static_cast<int64_t>(max_fraction * total)) continue;
      float tone[3];
      for (int c = 0; c < 3; ++c) tone[c] = static_cast<float>(rng.uniform(0.65, 0.95));
      for (int64_t i = ri; i < ri + rh; ++i) {
        for (int64_t j = rj; j < rj + rw; ++j) {
          const float noise = static_cast<float>(rng.uniform(-0.04, 0.04));
          for (int c = 0; c < 3; ++c) {
            p.image[(c * size + i) * size + j] = std::clamp(tone[c] + noise, 0.0f, 1.0f);
          }
          p.label[i * size + j] = 1;
        }
      }
      building_pixels += fresh;
      ++placed;
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: images/*.ppm, labels/*.pgm, manifest.csv

inline void write_dataset(const std::string& dir, const std::vector<LabeledPatch>& patches,
                          const DatasetManifest& manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  for (const auto& p : patches) {
    save_ppm((fs::path(dir) / "images" / (p.id() + ".ppm")).string(), p.image);
    save_pgm((fs::path(dir) / "labels" / (p.id() + ".pgm")).string(), p.label, p.height(),
             p.width());
  }
  std::ofstream os(fs::path(dir) / "manifest.csv");
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << manifest_csv(manifest);
}

struct Dataset {
  std::vector<LabeledPatch> train;
  std::vector<LabeledPatch> val;
};

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto manifest_path = fs::path(dir) / "manifest.csv";
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
  std::stringstream buf;
  buf << is.rdbuf();
  auto manifest = parse_manifest_csv(buf.str());
  Dataset ds;
  for (const auto& e : manifest.entries) {
    LabeledPatch p;
    p.source = e.source;
    p.row = e.row;
    p.col = e.col;
    p.image = load_ppm((fs::path(dir) / "images" / (e.id + ".ppm")).string());
    int64_t lh = 0, lw = 0;
    p.label = load_pgm((fs::path(dir) / "labels" / (e.id + ".pgm")).string(), &lh, &lw);
    if (lh != p.image.h() || lw != p.image.w()) {
      throw ValidationError("image/label dimension mismatch for patch " + e.id);
    }
    (e.split == Split::Train ? ds.train : ds.val).push_back(std::move(p));
  }
  return ds;
}

}  // namespace micronet

#endif
