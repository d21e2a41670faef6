#include "giftlab/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "giftlab/tabular.hpp"
#include "giftlab/transformer.hpp"

namespace giftlab::io {

namespace {

void write_f32le(std::ofstream& out, const std::vector<double>& params) {
  std::vector<unsigned char> bytes(params.size() * 4);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float f = static_cast<float>(params[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    bytes[4 * i + 0] = static_cast<unsigned char>(u & 0xFF);
    bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xFF);
    bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xFF);
    bytes[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> read_f32le(const std::filesystem::path& file, std::size_t expected) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: missing " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() != expected * 4) {
    throw std::runtime_error("load_checkpoint: expected " + std::to_string(expected) +
                             " parameters but file holds " + std::to_string(bytes.size() / 4));
  }
  std::vector<double> params(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    if (!std::isfinite(f)) {
      throw std::runtime_error("load_checkpoint: non-finite parameter at index " + std::to_string(i));
    }
    params[i] = static_cast<double>(f);
  }
  return params;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const model::PolicyModel& m) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["kind"] = m.kind();
  manifest["param_count"] = m.params().size();

  if (const auto* tr = dynamic_cast<const model::MicroTransformer*>(&m)) {
    manifest["vocabulary"] = {{"size", tr->vocab().size},
                              {"bos", tr->vocab().bos},
                              {"eos", tr->vocab().eos},
                              {"pad", tr->vocab().pad}};
    manifest["architecture"] = {{"width", tr->arch().width},
                                {"heads", tr->arch().heads},
                                {"layers", tr->arch().layers},
                                {"context", tr->arch().context}};
    manifest["creation_seed"] = tr->init_seed();
  } else if (const auto* tab = dynamic_cast<const model::TabularModel*>(&m)) {
    manifest["vocabulary"] = {{"size", tab->vocab_size()}, {"eos", tab->eos_id()}};
    manifest["architecture"] = {{"order", tab->order()}};
    manifest["creation_seed"] = 0;
  } else {
    throw std::logic_error("save_checkpoint: unknown model kind " + m.kind());
  }

  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("save_checkpoint: cannot write to " + dir.string());
  mf << manifest.dump(2) << "\n";
  std::ofstream pf(dir / "params.f32le", std::ios::binary);
  write_f32le(pf, m.params());
}

std::unique_ptr<model::PolicyModel> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("load_checkpoint: missing manifest in " + dir.string());
  nlohmann::json manifest;
  mf >> manifest;

  const int version = manifest.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version) + " (supported: " +
                             std::to_string(kCheckpointFormatVersion) + ")");
  }

  const std::string kind = manifest.at("kind").get<std::string>();
  std::unique_ptr<model::PolicyModel> m;
  if (kind == "micro-transformer") {
    const auto& vj = manifest.at("vocabulary");
    const model::Vocabulary voc(vj.at("size").get<int>(), vj.at("bos").get<int>(),
                                vj.at("eos").get<int>(), vj.at("pad").get<int>());
    const auto& aj = manifest.at("architecture");
    model::TransformerArch arch;
    arch.width = aj.at("width").get<int>();
    arch.heads = aj.at("heads").get<int>();
    arch.layers = aj.at("layers").get<int>();
    arch.context = aj.at("context").get<int>();
    m = std::make_unique<model::MicroTransformer>(voc, arch,
                                                  manifest.at("creation_seed").get<std::uint64_t>());
  } else if (kind == "tabular") {
    const auto& vj = manifest.at("vocabulary");
    m = std::make_unique<model::TabularModel>(vj.at("size").get<int>(),
                                              manifest.at("architecture").at("order").get<int>(),
                                              vj.at("eos").get<int>());
  } else {
    throw std::runtime_error("load_checkpoint: unknown model kind '" + kind + "'");
  }

  const std::size_t expected = manifest.at("param_count").get<std::size_t>();
  if (expected != m.get()->params().size()) {
    throw std::runtime_error("load_checkpoint: manifest parameter count " +
                             std::to_string(expected) + " does not match architecture count " +
                             std::to_string(m->params().size()));
  }
  m->params() = read_f32le(dir / "params.f32le", expected);
  return m;
}

}  // namespace giftlab::io
