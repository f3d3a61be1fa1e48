#include "fedser/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fedser/errors.hpp"

namespace fedser {

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("truncated model snapshot");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

void write_snapshot(std::ostream& out, const ModelParams& model) {
  out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
  put_le<std::uint32_t>(out, kSnapshotVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.layer_sizes().size()));
  for (std::size_t s : model.layer_sizes()) put_le<std::uint64_t>(out, s);
  // The flat buffer is already in layer order: weights then bias per layer.
  for (double v : model.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw Error("failed writing model snapshot");
}

ModelParams read_snapshot(std::istream& in) {
  char magic[sizeof(kSnapshotMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0) {
    throw Error("not a model snapshot (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kSnapshotVersion) throw Error("unsupported snapshot version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in);
  if (count < 2 || count > 64) throw Error("implausible layer count in snapshot");
  std::vector<std::size_t> sizes;
  for (std::uint32_t i = 0; i < count; ++i) sizes.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(in)));
  ModelParams model(sizes);
  for (double& v : model.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  if (in.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes after model snapshot");
  return model;
}

void save_snapshot(const std::filesystem::path& path, const ModelParams& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write snapshot " + path.string());
  write_snapshot(out, model);
}

ModelParams load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open snapshot " + path.string());
  return read_snapshot(in);
}

}  // namespace fedser
