#include "sbr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace sbr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written little-endian via memcpy");

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const ParamStore& params, std::uint64_t seed) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["meta"] = meta;
  header["seed"] = seed;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& [name, tensor] : params) {
    plist.push_back({{"name", name}, {"shape", tensor.shape()}});
  }
  header["params"] = plist;

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open checkpoint for writing: " + path.string());
  }
  out << header.dump() << "\n";
  for (const auto& [name, tensor] : params) {
    const Matrix& m = tensor.values();
    std::vector<double> row_major(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        row_major[k++] = m(r, c);
      }
    }
    out.write(reinterpret_cast<const char*>(row_major.data()),
              static_cast<std::streamsize>(row_major.size() * sizeof(double)));
  }
  if (!out) {
    throw IoError("short write on checkpoint: " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path.string());
  }
  std::string header_line;
  if (!std::getline(in, header_line)) {
    throw ParseError("checkpoint missing header line: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint header: " + std::string(e.what()));
  }
  if (header.value("format", "") != kCheckpointFormat) {
    throw SchemaError("unexpected checkpoint format tag in " + path.string());
  }

  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  for (const auto& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<Index> shape = entry.at("shape").get<std::vector<Index>>();
    TensorBuf tensor = TensorBuf::zeros(shape);
    Matrix& m = tensor.values();
    std::vector<double> row_major(static_cast<std::size_t>(m.size()));
    in.read(reinterpret_cast<char*>(row_major.data()),
            static_cast<std::streamsize>(row_major.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(row_major.size() * sizeof(double))) {
      throw ParseError("checkpoint truncated while reading '" + name + "'");
    }
    std::size_t k = 0;
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) {
        m(r, c) = row_major[k++];
      }
    }
    tensor.check_finite(name);
    ckpt.params.add(name, std::move(tensor));
  }
  return ckpt;
}

}  // namespace sbr
