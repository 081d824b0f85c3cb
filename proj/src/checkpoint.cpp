#include "pics/checkpoint.hpp"

#include "pics/error.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pics {

namespace {

constexpr char kMagic[4] = {'P', 'I', 'C', 'S'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t at) {
  if (at + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

Tensor round_to_f32(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.values()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const NamedTensor& nt : ckpt.tensors) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(nt.tensor.size()) * 4;
    entries.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = json{{"tensors", entries}, {"meta", ckpt.meta}}.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const NamedTensor& nt : ckpt.tensors) {
    for (double v : nt.tensor.values()) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in tensor " + nt.name);
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a PICS checkpoint");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (16 + header_len > bytes.size()) throw FormatError("checkpoint header truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const std::size_t blob_start = 16 + header_len;
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", json::object());
  for (const json& e : header.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    Tensor t(shape);
    if (static_cast<std::uint64_t>(t.size()) * 4 != nbytes) throw FormatError("checkpoint entry size mismatch");
    if (blob_start + offset + nbytes > bytes.size()) throw FormatError("checkpoint blob truncated");
    for (Index i = 0; i < t.size(); ++i) {
      const auto bits = get_le<std::uint32_t>(bytes, blob_start + offset + 4 * static_cast<std::size_t>(i));
      t.values()[static_cast<std::size_t>(i)] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ckpt.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
  }
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pics
