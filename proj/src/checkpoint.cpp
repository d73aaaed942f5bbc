#include "missmod/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "missmod/errors.hpp"

namespace missmod {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("checkpoint truncated");
  return v;
}

std::string read_string(std::istream& is) {
  const auto n = read_u64(is);
  if (n > (1ULL << 32)) throw IoError("checkpoint string length is implausible");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params, const std::string& metadata) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_string(os, metadata);
  write_u64(os, params.size());
  for (const auto& p : params) {
    write_string(os, p.name);
    write_string(os, std::string(to_string(p.role)));
    write_u64(os, p.tensor.rank());
    for (auto d : p.tensor.shape()) write_u64(os, d);
    auto data = p.tensor.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed while writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  Checkpoint ckpt;
  ckpt.metadata = read_string(is);
  const auto count = read_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = read_string(is);
    e.role = read_string(is);
    const auto rank = read_u64(is);
    if (rank > 8) throw IoError("checkpoint entry " + e.name + " has implausible rank");
    for (std::uint64_t r = 0; r < rank; ++r) e.shape.push_back(read_u64(is));
    e.values.resize(nn::numel(e.shape));
    if (!is.read(reinterpret_cast<char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(double)))) {
      throw IoError("checkpoint truncated in entry " + e.name);
    }
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

std::string load_checkpoint(const std::filesystem::path& path, ParameterList& params) {
  auto ckpt = read_checkpoint(path);
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : ckpt.entries) by_name[e.name] = &e;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError("checkpoint has no entry for " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw DimensionError("checkpoint entry " + p.name + " has shape " + nn::to_string(it->second->shape) +
                           ", model expects " + nn::to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
  }
  if (by_name.size() != params.size()) throw IoError("checkpoint holds parameters the model does not have");
  return ckpt.metadata;
}

}  // namespace missmod
