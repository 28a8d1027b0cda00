#include "trident/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <vector>

namespace trident {

namespace {

constexpr std::array<char, 8> kMagic{'T', 'R', 'I', 'D', 'E', 'N', 'T', '\0'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) { out_.write(p, std::streamsize(n)); }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = char((v >> (8 * i)) & 0xff);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
  std::uint32_t u32() { return std::uint32_t(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), std::streamsize(n));
    check();
    return s;
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), n);
    check();
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
    return v;
  }
  void check() {
    if (!in_) throw CheckpointError("checkpoint '" + source_ + "' is truncated");
  }
  std::istream& in_;
  std::string source_;
};

CheckpointHeader read_header(Reader& r, const std::string& source) {
  std::string magic = r.str(kMagic.size());
  if (magic != std::string(kMagic.data(), kMagic.size())) {
    throw CheckpointError("'" + source + "' is not a checkpoint (bad magic); expected format version " +
                          std::to_string(kCheckpointVersion));
  }
  CheckpointHeader h;
  h.version = r.u32();
  if (h.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint '" + source + "' has format version " + std::to_string(h.version) +
                          ", expected version " + std::to_string(kCheckpointVersion));
  }
  h.episode.n_ways = r.u32();
  h.episode.k_shots = r.u32();
  h.episode.q_queries = r.u32();
  h.episode.image_size = r.u32();
  h.episode.channels = r.u32();
  h.config_hash = r.u64();
  return h;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const EpisodeSpec& episode,
                     std::uint64_t config_hash) {
  auto& p = const_cast<ModelParams&>(params);  // slots are only read
  const auto slots = param_slots(p);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    Writer w(out);
    w.raw(kMagic.data(), kMagic.size());
    w.u32(kCheckpointVersion);
    for (std::size_t v : {episode.n_ways, episode.k_shots, episode.q_queries, episode.image_size, episode.channels})
      w.u32(std::uint32_t(v));
    w.u64(config_hash);
    w.u32(std::uint32_t(slots.size()));
    for (const auto& s : slots) {
      w.u32(std::uint32_t(s.name.size()));
      w.raw(s.name.data(), s.name.size());
      w.u32(std::uint32_t(s.var->rank()));
      for (std::size_t e : s.var->shape()) w.u64(e);
    }
    for (const auto& s : slots)
      for (double v : s.var->value().data()) w.f64(v);
    out.flush();
    if (!out) throw CheckpointError("failed while writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  Reader r(in, path.string());
  return read_header(r, path.string());
}

CheckpointHeader load_checkpoint(const std::filesystem::path& path, ModelParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  const std::string src = path.string();
  Reader r(in, src);
  const CheckpointHeader h = read_header(r, src);
  auto slots = param_slots(params);
  const std::uint32_t count = r.u32();
  if (count != slots.size()) {
    throw CheckpointError("checkpoint '" + src + "' holds " + std::to_string(count) + " parameter blocks, model expects " +
                          std::to_string(slots.size()));
  }
  for (const auto& s : slots) {
    const std::string name = r.str(r.u32());
    if (name != s.name) throw CheckpointError("checkpoint '" + src + "': block '" + name + "' where '" + s.name + "' was expected");
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    if (shape != s.var->shape()) {
      throw CheckpointError("checkpoint '" + src + "': block '" + name + "' has shape " + shape_to_string(shape) +
                            ", model expects " + shape_to_string(s.var->shape()));
    }
  }
  std::vector<NdArray> values;
  for (const auto& s : slots) {
    NdArray a(s.var->shape());
    for (auto& v : a.data()) v = r.f64();
    values.push_back(std::move(a));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i].var->mutable_value() = std::move(values[i]);
  return h;
}

}  // namespace trident
