#include "softmoe/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "softmoe/encoder.hpp"

namespace softmoe {

namespace {

struct File {
  std::FILE* f = nullptr;
  explicit File(std::FILE* fp) : f(fp) {}
  ~File() {
    if (f) std::fclose(f);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;
};

void put_bytes(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n)
    throw std::runtime_error("checkpoint: short write to " + path);
}

void get_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n)
    throw std::runtime_error("checkpoint: truncated file " + path);
}

void put_u16(std::FILE* f, uint16_t v, const std::string& path) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  put_bytes(f, b, 2, path);
}

void put_u32(std::FILE* f, uint32_t v, const std::string& path) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(f, b, 4, path);
}

uint16_t get_u16(std::FILE* f, const std::string& path) {
  unsigned char b[2];
  get_bytes(f, b, 2, path);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  get_bytes(f, b, 4, path);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_f32(std::FILE* f, float v, const std::string& path) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(f, bits, path);
}

float get_f32(std::FILE* f, const std::string& path) {
  const uint32_t bits = get_u32(f, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  File file(std::fopen(path.c_str(), "wb"));
  if (!file.f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  put_bytes(file.f, "SMOE", 4, path);
  put_u32(file.f, kCheckpointVersion, path);
  put_u32(file.f, static_cast<uint32_t>(tensors.size()), path);
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw std::runtime_error("checkpoint: tensor name too long");
    put_u16(file.f, static_cast<uint16_t>(name.size()), path);
    put_bytes(file.f, name.data(), name.size(), path);
    const uint8_t rank = static_cast<uint8_t>(t->rank());
    put_bytes(file.f, &rank, 1, path);
    for (long i = 0; i < t->rank(); ++i)
      put_u32(file.f, static_cast<uint32_t>(t->dim(i)), path);
    for (long i = 0; i < t->numel(); ++i)
      put_f32(file.f, static_cast<float>(t->at(i)), path);
  }
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  File file(std::fopen(path.c_str(), "rb"));
  if (!file.f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  get_bytes(file.f, magic, 4, path);
  if (std::memcmp(magic, "SMOE", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(file.f, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = get_u32(file.f, path);
  std::map<std::string, Tensor> out;
  for (uint32_t k = 0; k < count; ++k) {
    const uint16_t name_len = get_u16(file.f, path);
    std::string name(name_len, '\0');
    get_bytes(file.f, name.data(), name_len, path);
    uint8_t rank = 0;
    get_bytes(file.f, &rank, 1, path);
    std::vector<long> dims(rank);
    long numel = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      dims[i] = static_cast<long>(get_u32(file.f, path));
      numel *= dims[i];
    }
    Tensor t(dims);
    for (long i = 0; i < numel; ++i) t.at(i) = static_cast<double>(get_f32(file.f, path));
    if (!out.emplace(std::move(name), std::move(t)).second)
      throw std::runtime_error("checkpoint: duplicate tensor name in " + path);
  }
  return out;
}

void save_encoder(const Encoder& model, const std::string& path) {
  save_checkpoint(path, model.param_refs());
}

void load_into(Encoder& model, const std::string& path) {
  std::map<std::string, Tensor> loaded = load_checkpoint(path);
  auto refs = model.param_refs();
  if (loaded.size() != refs.size())
    throw std::runtime_error("checkpoint: tensor count mismatch in " + path);
  for (auto& [name, dst] : refs) {
    auto it = loaded.find(name);
    if (it == loaded.end())
      throw std::runtime_error("checkpoint: missing tensor '" + name + "' in " + path);
    if (it->second.dims() != dst->dims())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "' in " + path);
    *dst = std::move(it->second);
  }
}

}  // namespace softmoe
