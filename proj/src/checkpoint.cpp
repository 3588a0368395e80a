#include "aumn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "aumn/binary_io.hpp"

namespace aumn {

namespace {
constexpr char kMagic[4] = {'A', 'U', 'M', 'N'};
}

void save_checkpoint(const std::filesystem::path& path, const ModelDims& dims,
                     const ModelParams& params) {
  validate(dims);
  check_shapes(params, dims);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("save_checkpoint: cannot open " + path.string());
  }
  out.write(kMagic, 4);
  write_u32_le(out, kCheckpointVersion);
  for (Index d : {dims.D, dims.F, dims.C, dims.K, dims.m, dims.r, dims.kernel}) {
    write_u32_le(out, static_cast<std::uint32_t>(d));
  }
  params.for_each_tensor([&](const char*, const auto& t) { write_tensor(out, t); });
  if (!out) {
    throw IoError("save_checkpoint: write failed for " + path.string());
  }
}

std::pair<ModelDims, ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("load_checkpoint: cannot open " + path.string());
  }
  char magic[4];
  if (!in.read(magic, 4)) {
    throw TruncatedFileError("load_checkpoint: " + path.string() + " shorter than its header");
  }
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw BadMagicError("load_checkpoint: " + path.string() + " is not an AUMN checkpoint");
  }
  std::uint32_t version = 0;
  if (!read_u32_le(in, version)) {
    throw TruncatedFileError("load_checkpoint: " + path.string() + " shorter than its header");
  }
  if (version != kCheckpointVersion) {
    throw IoError("load_checkpoint: unsupported format version " + std::to_string(version));
  }
  std::uint32_t raw[7];
  for (auto& v : raw) {
    if (!read_u32_le(in, v)) {
      throw TruncatedFileError("load_checkpoint: " + path.string() + " shorter than its header");
    }
  }
  ModelDims dims;
  dims.D = raw[0];
  dims.F = raw[1];
  dims.C = raw[2];
  dims.K = raw[3];
  dims.m = raw[4];
  dims.r = raw[5];
  dims.kernel = raw[6];
  validate(dims);

  ModelParams params = ModelParams::zeros(dims);
  bool ok = true;
  params.for_each_tensor([&](const char*, auto& t) { ok = ok && read_tensor(in, t); });
  if (!ok) {
    throw TruncatedFileError("load_checkpoint: " + path.string() +
                             " payload shorter than the declared dimensions");
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw IoError("load_checkpoint: " + path.string() + " has trailing bytes");
  }
  return {dims, std::move(params)};
}

}  // namespace aumn
