#include "pswa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pswa/error.hpp"

namespace pswa {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T take(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> take_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated in ") + what, pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw FormatError("checkpoint has no tensor '" + name + "'", 0);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out{'P', 'S', 'W', 'A'};
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw UsageError("checkpoint tensor name too long: " + t.name.substr(0, 40));
    if (t.value.rank() > 0xff) throw UsageError("checkpoint tensor rank too large: " + t.name);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.value.rank()));
    for (auto d : t.value.shape()) {
      if (d > 0xffffffffu) throw UsageError("checkpoint tensor dimension too large: " + t.name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.value.data());
    out.insert(out.end(), p, p + t.value.size() * sizeof(float));
  }
  out.insert(out.end(), ckpt.config_hash.begin(), ckpt.config_hash.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take_bytes(4, "magic");
  if (std::memcmp(magic.data(), "PSWA", 4) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
  const auto version = r.take<std::uint32_t>("version");
  if (version != Checkpoint::kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  const auto count = r.take<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.take<std::uint16_t>("name length");
    const auto name = r.take_bytes(name_len, "name");
    const std::size_t shape_at = r.pos();
    const auto rank = r.take<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.take<std::uint32_t>("shape");
    const std::size_t n = shape_numel(shape);
    if (rank == 0 || n == 0) throw FormatError("checkpoint tensor with empty shape", shape_at);
    if (n > r.remaining() / sizeof(float)) throw FormatError("checkpoint truncated in payload", r.pos());
    const auto payload = r.take_bytes(n * sizeof(float), "payload");
    std::vector<float> values(n);
    std::memcpy(values.data(), payload.data(), payload.size());
    ckpt.tensors.push_back({std::string(name.begin(), name.end()), Tensor(std::move(shape), std::move(values))});
  }
  const auto hash = r.take_bytes(32, "config hash");
  std::memcpy(ckpt.config_hash.data(), hash.data(), 32);
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.pos());
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pswa
