#include "uvcgan/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "uvcgan/errors.hpp"

namespace uvcgan {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'U', 'V', 'C', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    case torch::kBool: return "bool";
    default: throw IoError(std::string("unsupported checkpoint dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  if (name == "bool") return torch::kBool;
  throw IoError("unknown checkpoint dtype '" + name + "'");
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return take(get<std::uint32_t>()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Archive::add(std::string name, const torch::Tensor& tensor) {
  arrays.emplace_back(std::move(name), tensor.detach().cpu().contiguous().clone());
}

bool Archive::contains(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return true;
  }
  return false;
}

const torch::Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw IoError("checkpoint has no array '" + name + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> Archive::with_prefix(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& [n, t] : arrays) {
    if (n.rfind(prefix, 0) == 0) out.emplace_back(n.substr(prefix.size()), t);
  }
  return out;
}

std::string serialize_archive(const Archive& archive) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const auto meta = archive.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.append(meta);
  put<std::uint64_t>(out, archive.arrays.size());
  for (const auto& [name, tensor] : archive.arrays) {
    auto t = tensor.contiguous();
    put_string(out, name);
    put_string(out, dtype_name(t.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    put<std::uint64_t>(out, nbytes);
    out.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  return out;
}

Archive deserialize_archive(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  if (in.get<std::uint32_t>() != kVersion) throw IoError("unsupported checkpoint version");
  Archive archive;
  archive.metadata = nlohmann::json::parse(in.take(in.get<std::uint64_t>()));
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = in.get_string();
    auto dtype = dtype_from(in.get_string());
    const auto ndim = in.get<std::uint32_t>();
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) d = in.get<std::int64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    const auto nbytes = in.get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) {
      throw IoError("checkpoint array '" + name + "' has inconsistent size");
    }
    auto data = in.take(nbytes);
    std::memcpy(t.data_ptr(), data.data(), nbytes);
    archive.arrays.emplace_back(std::move(name), t);
  }
  if (!in.done()) throw IoError("trailing bytes after checkpoint arrays");
  return archive;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize_archive(archive);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_archive(buf.str());
}

void add_module_state(Archive& archive, const std::string& prefix,
                      const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) {
    archive.add(prefix + "/" + item.key(), item.value());
  }
  for (const auto& item : module.named_buffers()) {
    archive.add(prefix + "/" + item.key(), item.value());
  }
}

void load_module_state(const Archive& archive, const std::string& prefix,
                       torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& key, torch::Tensor target) {
    const auto& source = archive.get(prefix + "/" + key);
    if (source.sizes() != target.sizes()) {
      throw ShapeError("checkpoint array '" + prefix + "/" + key + "' has shape " +
                       c10::str(source.sizes()) + ", model expects " + c10::str(target.sizes()));
    }
    target.copy_(source);
  };
  for (const auto& item : module.named_parameters()) copy(item.key(), item.value());
  for (const auto& item : module.named_buffers()) copy(item.key(), item.value());
}

}  // namespace uvcgan
