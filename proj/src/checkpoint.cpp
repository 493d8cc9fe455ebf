#include "dtv/checkpoint.hpp"

#include "dtv/binary_io.hpp"

#include <json.hpp>

#include <fstream>
#include <iterator>

namespace dtv {

namespace io {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::string& path, const std::vector<char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace io

namespace {

nlohmann::json config_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"max_frames", c.max_frames},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_dim", c.ffn_dim},
          {"activation", to_string(c.activation)},
          {"mode", to_string(c.mode)},
          {"fusion", to_string(c.fusion)},
          {"fusion_projection", c.fusion_projection},
          {"similarity", to_string(c.similarity)}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<Index>();
  c.max_frames = j.at("max_frames").get<Index>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<Index>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.mode = parse_dialogue_mode(j.at("mode").get<std::string>());
  c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  c.fusion_projection = j.at("fusion_projection").get<bool>();
  c.similarity = parse_similarity(j.at("similarity").get<std::string>());
  return c;
}

}  // namespace

std::uint64_t fnv1a64(const char* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<char> serialize_checkpoint(const ModelParams& params) {
  const auto named = params.named_parameters();
  nlohmann::json header;
  header["config"] = config_json(params.config());
  header["mode"] = to_string(params.config().mode);
  header["parameter_count"] = params.parameter_count();
  auto& blocks = header["parameters"] = nlohmann::json::array();
  for (const auto& p : named) blocks.push_back({{"name", p.name}, {"shape", {p.tensor.rows(), p.tensor.cols()}}});
  const std::string text = header.dump();

  std::vector<char> out;
  io::Writer w(out);
  w.bytes(kCheckpointMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  for (const auto& p : named) {
    const EmbeddingMatrix values = p.tensor.value().cast<float>();
    w.bytes(values.data(), static_cast<std::size_t>(values.size()) * sizeof(float));
  }
  return out;
}

ModelParams deserialize_checkpoint(const std::vector<char>& bytes) {
  io::Reader<FormatError> r(bytes.data(), bytes.size(), "checkpoint");
  char magic[4];
  r.take(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic (expected DTVC)");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  ModelParams params = ModelParams::initialize(config_from_json(header.at("config")), 0);
  auto named = params.named_parameters();
  const auto& blocks = header.at("parameters");
  if (blocks.size() != named.size()) {
    throw FormatError("checkpoint: header lists " + std::to_string(blocks.size()) + " blocks, config implies " +
                      std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& block = blocks[i];
    const auto name = block.at("name").get<std::string>();
    const auto rows = block.at("shape").at(0).get<Index>();
    const auto cols = block.at("shape").at(1).get<Index>();
    auto& target = named[i];
    if (name != target.name || rows != target.tensor.rows() || cols != target.tensor.cols()) {
      throw FormatError("checkpoint: block " + std::to_string(i) + " is " + name + shape_string(rows, cols) +
                        ", expected " + target.name + shape_string(target.tensor.value()));
    }
    EmbeddingMatrix values(rows, cols);
    r.take(values.data(), static_cast<std::size_t>(values.size()) * sizeof(float));
    target.tensor.mutable_value() = values.cast<double>();
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after parameter blocks");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  io::write_file_atomic(path.string(), serialize_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path.string()));
}

std::uint64_t checkpoint_fingerprint(const ModelParams& params) {
  const auto bytes = serialize_checkpoint(params);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace dtv
