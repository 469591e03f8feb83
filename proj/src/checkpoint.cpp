#include "gradprobe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <string_view>

#include "gradprobe/io.hpp"

namespace gradprobe {

namespace {

constexpr std::string_view kMagic = "GPRB1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError("checkpoint truncated reading " + std::string(what) + " at offset " +
                        std::to_string(pos_));
  }
  std::uint64_t le(std::size_t n, const char* what) {
    need(n, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  double f64() { return std::bit_cast<double>(le(8, "value")); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<ParameterSet>& sets) {
  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(sets.size()));
  for (const auto& set : sets) {
    put_u32(out, static_cast<std::uint32_t>(set.name.size()));
    out += set.name;
    put_u32(out, static_cast<std::uint32_t>(set.values.rank()));
    for (std::size_t d : set.values.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : set.values.data()) put_f64(out, v);
  }
  return out;
}

std::vector<ParameterSet> decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(kMagic.size(), "magic") != kMagic) throw FormatError("checkpoint has bad magic at offset 0");
  const std::uint32_t count = in.u32("set count");
  std::vector<ParameterSet> sets;
  for (std::uint32_t s = 0; s < count; ++s) {
    ParameterSet set;
    set.name = in.str(in.u32("name length"), "name");
    const std::uint32_t rank = in.u32("rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(in.u32("dimension"));
    const std::size_t n = shape_size(shape);
    in.need(n * 8, "values");
    std::vector<double> values(n);
    for (double& v : values) v = in.f64();
    set.values = Tensor(std::move(shape), std::move(values));
    sets.push_back(std::move(set));
  }
  if (!in.done())
    throw FormatError("checkpoint has trailing bytes at offset " + std::to_string(in.pos()));
  return sets;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<ParameterSet>& sets) {
  write_file_atomic(path, encode_checkpoint(sets));
}

std::vector<ParameterSet> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace gradprobe
