#include "l2sa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "l2sa/random.hpp"

namespace l2sa::data {
namespace fs = std::filesystem;

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error(ErrorKind::Config, "unknown split '" + s + "' (expected train, val or test)");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::class_counts(std::optional<Split> s) const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& smp : samples)
    if (!s || smp.split == *s) ++counts.at(std::size_t(smp.label));
  return counts;
}

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw Error(ErrorKind::Value, "to_grayscale: expected 1 or 3 channels");
  Image gray{image.height, image.width, 1, std::vector<Real>(image.height * image.width)};
  for (std::size_t i = 0; i < gray.values.size(); ++i) {
    const Real* px = &image.values[i * 3];
    gray.values[i] = Real(0.299) * px[0] + Real(0.587) * px[1] + Real(0.114) * px[2];
  }
  return gray;
}

Image resize_bilinear(const Image& gray, std::size_t height, std::size_t width) {
  if (gray.channels != 1) throw Error(ErrorKind::Value, "resize_bilinear: expected a single channel");
  if (gray.height == 0 || gray.width == 0) throw Error(ErrorKind::Value, "resize_bilinear: zero-dimension image");
  if (gray.height == height && gray.width == width) return gray;
  Image out{height, width, 1, std::vector<Real>(height * width)};
  const double sy = double(gray.height) / double(height);
  const double sx = double(gray.width) / double(width);
  auto coord = [](std::size_t dst, double scale, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
    const double src = std::clamp((double(dst) + 0.5) * scale - 0.5, 0.0, double(n - 1));
    i0 = std::size_t(src);
    i1 = std::min(i0 + 1, n - 1);
    frac = src - double(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, sy, gray.height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, sx, gray.width, x0, x1, fx);
      const double top = (1 - fx) * gray.values[y0 * gray.width + x0] + fx * gray.values[y0 * gray.width + x1];
      const double bottom = (1 - fx) * gray.values[y1 * gray.width + x0] + fx * gray.values[y1 * gray.width + x1];
      out.values[y * width + x] = Real((1 - fy) * top + fy * bottom);
    }
  }
  return out;
}

ImageRecord preprocess(const Image& image, std::size_t size) {
  if (image.height == 0 || image.width == 0) throw Error(ErrorKind::Value, "preprocess: zero-dimension image");
  const Image gray = resize_bilinear(to_grayscale(image), size, size);
  ImageRecord rec;
  rec.pixels = Tensor(Shape{3, size, size});
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < plane; ++i) {
    const Real v = std::clamp(gray.values[i] / Real(255), Real(0), Real(1));
    for (std::size_t c = 0; c < 3; ++c) rec.pixels[c * plane + i] = v;
  }
  return rec;
}

ImageRecord preprocess(const ImageRecord& record, std::size_t size) {
  const Shape& s = record.pixels.shape();
  if (s.rank() != 3 || s[0] != 3) throw ShapeError("preprocess", "channels", "expected (3,H,W), got " + s.str());
  Image gray{s[1], s[2], 1, std::vector<Real>(s[1] * s[2])};
  for (std::size_t i = 0; i < gray.values.size(); ++i) gray.values[i] = record.pixels[i] * Real(255);
  ImageRecord out = preprocess(gray, size);
  out.label = record.label;
  out.source_id = record.source_id;
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return ext == ".png" || ext == ".bmp" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<float> to_stored(const ImageRecord& rec) {
  const std::size_t plane = rec.pixels.size() / 3;
  std::vector<float> g(plane);
  for (std::size_t i = 0; i < plane; ++i) g[i] = float(rec.pixels[i]);
  return g;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace

Dataset load_directory(const fs::path& root, std::span<const std::string> expected_classes, std::size_t size) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::Io, "dataset root '" + root.string() + "' is not a directory");
  std::vector<std::string> classes;
  if (!expected_classes.empty()) {
    classes.assign(expected_classes.begin(), expected_classes.end());
    std::vector<std::string> missing;
    for (const auto& c : classes)
      if (!fs::is_directory(root / c)) missing.push_back(c);
    if (!missing.empty()) {
      throw Error(ErrorKind::Io, "dataset root '" + root.string() + "' is missing class director" +
                                     (missing.size() == 1 ? "y" : "ies") + " " + join(missing, ", ") +
                                     " (expected: " + join(classes, ", ") + ")");
    }
  } else {
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw Error(ErrorKind::Io, "dataset root '" + root.string() + "' has no class directories");

  Dataset ds;
  ds.class_names = classes;
  ds.height = ds.width = size;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / classes[label]))
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    if (files.empty()) throw Error(ErrorKind::Io, "class directory '" + (root / classes[label]).string() + "' is empty");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Sample s;
      s.path = fs::relative(f, root).generic_string();
      s.label = int(label);
      s.gray = to_stored(preprocess(read_image(f), size));
      ds.samples.push_back(std::move(s));
    }
  }
  // Lexicographic by relative path across classes.
  std::sort(ds.samples.begin(), ds.samples.end(), [](const Sample& a, const Sample& b) { return a.path < b.path; });
  return ds;
}

void split(Dataset& dataset, SplitFractions f, std::uint64_t seed) {
  const std::size_t n = dataset.samples.size();
  if (n < 3) throw Error(ErrorKind::Value, "split: need at least 3 samples, got " + std::to_string(n));
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw Error(ErrorKind::Value, "split: fractions must be non-negative and sum to 1");
  }
  const std::size_t n_train = std::size_t(std::llround(double(n) * f.train));
  const std::size_t n_val = std::min(n - n_train, std::size_t(std::llround(double(n) * f.val)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t k = 0; k < n; ++k) {
    dataset.samples[order[k]].split = k < n_train ? Split::Train : k < n_train + n_val ? Split::Val : Split::Test;
  }
  dataset.seed = seed;
  dataset.fractions = f;
}

std::string manifest_text(const Dataset& ds) {
  std::ostringstream os;
  os << "# seed=" << ds.seed << " fractions=" << ds.fractions.train << ',' << ds.fractions.val << ','
     << ds.fractions.test << " classes=" << join(ds.class_names, ",") << '\n';
  for (std::optional<Split> s : {std::optional<Split>{}, std::optional<Split>{Split::Train},
                                 std::optional<Split>{Split::Val}, std::optional<Split>{Split::Test}}) {
    const auto counts = ds.class_counts(s);
    std::size_t total = 0;
    os << "# " << (s ? to_string(*s) : "all") << ':';
    for (std::size_t c = 0; c < counts.size(); ++c) {
      os << ' ' << ds.class_names[c] << '=' << counts[c];
      total += counts[c];
    }
    os << " total=" << total << '\n';
  }
  for (const auto& smp : ds.samples) os << smp.path << '\t' << smp.label << '\t' << to_string(smp.split) << '\n';
  return os.str();
}

void write_manifest(const Dataset& ds, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
  os << manifest_text(ds);
}

void apply_manifest(Dataset& ds, const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Io, "cannot read manifest " + path.string());
  std::map<std::string, std::size_t> by_path;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_path[ds.samples[i].path] = i;
  std::string line;
  std::size_t assigned = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("seed=");
      if (pos != std::string::npos && line.find("fractions=") != std::string::npos) {
        std::istringstream hs(line.substr(pos + 5));
        hs >> ds.seed;
      }
      continue;
    }
    std::istringstream ls(line);
    std::string p, label, split_name;
    if (!std::getline(ls, p, '\t') || !std::getline(ls, label, '\t') || !std::getline(ls, split_name)) {
      throw Error(ErrorKind::Format, "manifest " + path.string() + ": malformed line '" + line + "'");
    }
    auto it = by_path.find(p);
    if (it == by_path.end()) throw Error(ErrorKind::Format, "manifest " + path.string() + ": unknown sample '" + p + "'");
    ds.samples[it->second].split = parse_split(split_name);
    ++assigned;
  }
  if (assigned != ds.samples.size()) {
    throw Error(ErrorKind::Format, "manifest " + path.string() + " assigns " + std::to_string(assigned) + " of " +
                                       std::to_string(ds.samples.size()) + " samples");
  }
}

Dataset synth_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed, std::size_t size) {
  if (per_class < 1) throw Error(ErrorKind::Value, "synth_dataset: per_class must be >= 1");
  if (classes < 1) throw Error(ErrorKind::Value, "synth_dataset: need at least one class");
  static const std::vector<std::string> kNames{"glioma", "meningioma", "pituitary"};
  Dataset ds;
  ds.height = ds.width = size;
  for (std::size_t c = 0; c < classes; ++c) ds.class_names.push_back(c < kNames.size() ? kNames[c] : "class" + std::to_string(c));

  Rng rng(seed);
  const double sigma = double(size) / 10.0;
  for (std::size_t c = 0; c < classes; ++c) {
    // Centers spread evenly on a circle around the image center.
    const double angle = 2.0 * 3.14159265358979323846 * double(c) / double(classes);
    const double cy0 = double(size) * (0.5 + 0.25 * std::sin(angle));
    const double cx0 = double(size) * (0.5 + 0.25 * std::cos(angle));
    for (std::size_t i = 0; i < per_class; ++i) {
      const double cy = cy0 + double(rng.uniform(-2, 2));
      const double cx = cx0 + double(rng.uniform(-2, 2));
      Image img{size, size, 1, std::vector<Real>(size * size)};
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double d2 = (double(y) - cy) * (double(y) - cy) + (double(x) - cx) * (double(x) - cx);
          const double v = 190.0 * std::exp(-d2 / (2 * sigma * sigma)) + double(rng.uniform(0, 50));
          img.values[y * size + x] = Real(std::round(std::min(v, 255.0)));
        }
      Sample s;
      s.label = int(c);
      s.path = ds.class_names[c] + "/synth_" + std::to_string(i) + ".png";
      s.gray = to_stored(preprocess(img, size));
      ds.samples.push_back(std::move(s));
    }
  }
  std::sort(ds.samples.begin(), ds.samples.end(), [](const Sample& a, const Sample& b) { return a.path < b.path; });
  return ds;
}

void write_dataset_images(const Dataset& ds, const fs::path& root) {
  for (const auto& s : ds.samples) {
    Image img{ds.height, ds.width, 1, std::vector<Real>(s.gray.size())};
    for (std::size_t i = 0; i < s.gray.size(); ++i) img.values[i] = Real(std::round(double(s.gray[i]) * 255.0));
    write_image(img, root / s.path);
  }
}

Tensor make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t plane = ds.height * ds.width;
  Tensor batch = Tensor::nchw(indices.size(), 3, ds.height, ds.width);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& g = ds.samples.at(indices[b]).gray;
    if (g.size() != plane) throw ShapeError("make_batch", "size", "sample '" + ds.samples[indices[b]].path + "'");
    for (std::size_t c = 0; c < 3; ++c) {
      Real* dst = batch.ptr() + (b * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = Real(g[i]);
    }
  }
  return batch;
}

std::vector<int> batch_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(ds.samples.at(i).label);
  return labels;
}

}  // namespace l2sa::data
