#include "l2sa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace l2sa {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  template <typename T>
  void pod(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void text(const std::string& s) {
    pod(std::uint32_t(s.size()));
    os_.write(s.data(), std::streamsize(s.size()));
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, std::string path) : is_(is), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is_) fail("truncated file");
    return v;
  }
  std::string text(std::size_t limit = std::size_t(1) << 26) {
    const auto n = pod<std::uint32_t>();
    if (n > limit) fail("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) fail("truncated file");
    return s;
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorKind::Format, "checkpoint " + path_ + ": " + why);
  }

 private:
  std::ifstream& is_;
  std::string path_;
};

std::string metadata_text(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> parse_metadata(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, ElementWidth width) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
  Writer w(os);
  os.write(kCheckpointMagic, 4);
  w.pod(kCheckpointVersion);
  w.pod(std::uint8_t(width));
  w.text(ckpt.graph.describe());
  w.text(metadata_text(ckpt.metadata));
  w.pod(std::uint32_t(ckpt.params.size()));
  for (const auto& name : ckpt.params.names()) {
    const Tensor& t = ckpt.params.at(name);
    w.text(name);
    w.pod(std::uint32_t(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) w.pod(std::uint64_t(d));
    for (Real v : t.data()) {
      if (width == ElementWidth::F64) {
        w.pod(double(v));
      } else {
        w.pod(float(v));
      }
    }
  }
  if (!os) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) r.fail("bad magic (not an L2SA checkpoint)");
  const auto version = r.pod<std::uint16_t>();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto width = r.pod<std::uint8_t>();
  if (width != 4 && width != 8) r.fail("bad element width " + std::to_string(width));

  Checkpoint ckpt;
  ckpt.graph = model::LayerGraph::parse(r.text());
  ckpt.metadata = parse_metadata(r.text());
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.text(4096);
    const auto rank = r.pod<std::uint32_t>();
    if (rank < 1 || rank > kMaxRank) r.fail("tensor '" + name + "' has rank " + std::to_string(rank));
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = std::size_t(r.pod<std::uint64_t>());
    const Shape shape(dims);
    if (shape.numel() > (std::size_t(1) << 32)) r.fail("tensor '" + name + "' too large");
    Tensor t(shape);
    for (auto& v : t.data()) v = width == 8 ? Real(r.pod<double>()) : Real(r.pod<float>());
    ckpt.params.add(name, std::move(t));
  }
  for (const auto& [name, shape] : model::parameter_slots(ckpt.graph)) {
    if (!ckpt.params.contains(name)) r.fail("missing parameter '" + name + "'");
    if (!(ckpt.params.at(name).shape() == shape)) {
      r.fail("parameter '" + name + "' has shape " + ckpt.params.at(name).shape().str() + ", graph expects " + shape.str());
    }
  }
  return ckpt;
}

}  // namespace l2sa
