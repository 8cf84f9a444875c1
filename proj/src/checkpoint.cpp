#include "tvae/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "tvae/data.hpp"
#include "tvae/errors.hpp"

namespace tvae {

namespace {

constexpr char kMagic[4] = {'T', 'V', 'A', 'E'};
constexpr std::uint32_t kMaxRank = 8;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));  // hosts are little-endian
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end, std::string origin)
      : bytes_(bytes), end_(end), origin_(std::move(origin)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > end_ - pos_) throw FileError(origin_ + ": truncated while reading " + what);
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace

const std::string* CheckpointData::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return &v;
  }
  return nullptr;
}

const Tensor* CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const CheckpointData& data) {
  std::string meta;
  for (const auto& [k, v] : data.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint metadata '" + k + "' contains a reserved character");
    }
    meta += k + "=" + v + "\n";
  }
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.values()) put<double>(out, v);
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

CheckpointData decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 8) throw FileError(origin + ": file too short to be a checkpoint");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FileError(origin + ": bad magic, not a checkpoint");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a64(std::string_view(bytes.data(), body))) {
    throw FileError(origin + ": checksum mismatch (corrupt or truncated file)");
  }

  Reader r(bytes, body, origin);
  r.bytes(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FileError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  if (meta_len > r.remaining()) throw FileError(origin + ": truncated while reading metadata");
  CheckpointData data;
  std::stringstream meta(r.bytes(meta_len, "metadata"));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FileError(origin + ": malformed metadata line");
    data.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    if (name_len > r.remaining()) throw FileError(origin + ": truncated while reading tensor name");
    std::string name = r.bytes(name_len, "tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    if (rank > kMaxRank) throw FileError(origin + ": tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("tensor dims");
      if (d != 0 && numel > r.remaining() / d) {
        throw FileError(origin + ": tensor '" + name + "' larger than the file");
      }
      numel *= d;
    }
    if (numel > r.remaining() / 8) throw FileError(origin + ": truncated while reading tensor '" + name + "'");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.get<double>("tensor values");
    data.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FileError(origin + ": trailing bytes after tensors");
  return data;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  const std::string bytes = encode_checkpoint(data);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FileError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace tvae
