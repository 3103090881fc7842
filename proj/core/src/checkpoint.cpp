#include "mvprompt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvprompt/errors.hpp"

namespace mvp {
namespace {

void write_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void write_f32(std::string& out, float f) { write_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: truncated data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(const std::string& name, const Mat& m) {
  put(name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
      std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

void Checkpoint::put(const std::string& name, const RowVec& v) {
  put(name, {static_cast<std::uint32_t>(v.size())},
      std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

void Checkpoint::put(const std::string& name, std::vector<std::uint32_t> dims,
                     std::span<const double> values) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  if (n != values.size()) throw DimensionError("checkpoint: dims do not match value count for " + name);
  Array a;
  a.dims = std::move(dims);
  a.values.assign(values.begin(), values.end());
  arrays_[name] = std::move(a);
}

const Checkpoint::Array& Checkpoint::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw IoError("checkpoint: missing array '" + name + "'");
  return it->second;
}

Mat Checkpoint::matrix(const std::string& name, int rows, int cols) const {
  const auto& a = get(name);
  if (a.dims.size() != 2 || a.dims[0] != static_cast<std::uint32_t>(rows) ||
      a.dims[1] != static_cast<std::uint32_t>(cols)) {
    throw DimensionError("checkpoint: array '" + name + "' has unexpected shape");
  }
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = a.values[static_cast<std::size_t>(i)];
  return m;
}

RowVec Checkpoint::vector(const std::string& name, int size) const {
  const auto& a = get(name);
  if (a.dims.size() != 1 || a.dims[0] != static_cast<std::uint32_t>(size)) {
    throw DimensionError("checkpoint: array '" + name + "' has unexpected shape");
  }
  RowVec v(size);
  for (int i = 0; i < size; ++i) v[i] = a.values[static_cast<std::size_t>(i)];
  return v;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  write_u32(out, kVersion);
  for (const auto& [name, a] : arrays_) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    write_u32(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) write_u32(out, d);
    for (float f : a.values) write_f32(out, f);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw IoError("checkpoint: bad magic");
  if (auto v = r.u32(); v != kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint ck;
  while (!r.done()) {
    std::string name(r.take(r.u32()));
    Array a;
    a.dims.resize(r.u32());
    std::size_t n = 1;
    for (auto& d : a.dims) {
      d = r.u32();
      n *= d;
    }
    a.values.resize(n);
    for (auto& f : a.values) f = r.f32();
    ck.arrays_[name] = std::move(a);
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  auto bytes = serialize();
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize(ss.str());
}

}  // namespace mvp
