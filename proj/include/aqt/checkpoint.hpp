#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "aqt/error.hpp"
#include "aqt/model.hpp"
#include "aqt/train.hpp"

namespace aqt {

// Checkpoint file layout:
//   line 1: "aqt-checkpoint v1"
//   line 2: one-line JSON header {config, train_options, provenance, parameters:[{name, rows, cols}]}
//   then every parameter array in header order as little-endian float64, row-major.

struct Checkpoint {
  TransformerModel model;
  TrainOptions train_options;
  std::string provenance;
};

inline constexpr const char* kCheckpointMagic = "aqt-checkpoint v1";

inline nlohmann::json to_json(const TransformerConfig& c) {
  return {{"n_layers", c.n_layers}, {"embed_dim", c.embed_dim}, {"n_heads", c.n_heads}, {"ff_dim", c.ff_dim},
          {"vocab", c.vocab},       {"max_len", c.max_len},     {"seed", c.seed}};
}

inline TransformerConfig config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const TrainOptions& o) {
  return {{"learning_rate", o.learning_rate}, {"lr_decay", o.lr_decay}, {"batch_size", o.batch_size}, {"max_epochs", o.max_epochs},
          {"beta1", o.beta1},                 {"beta2", o.beta2},           {"epsilon", o.epsilon},
          {"seed", o.seed},                   {"shuffle", o.shuffle},       {"heldout_fraction", o.heldout_fraction},
          {"patience", o.patience}};
}

inline TrainOptions train_options_from_json(const nlohmann::json& j) {
  TrainOptions o;
  o.learning_rate = j.at("learning_rate").get<double>();
  o.lr_decay = j.value("lr_decay", 1.0);
  o.batch_size = j.at("batch_size").get<std::size_t>();
  o.max_epochs = j.at("max_epochs").get<std::size_t>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.epsilon = j.at("epsilon").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.shuffle = j.at("shuffle").get<bool>();
  o.heldout_fraction = j.at("heldout_fraction").get<double>();
  o.patience = j.at("patience").get<std::size_t>();
  return o;
}

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  nlohmann::json header;
  header["config"] = to_json(ck.model.config());
  header["train_options"] = to_json(ck.train_options);
  header["provenance"] = ck.provenance;
  auto& table = header["parameters"] = nlohmann::json::array();
  for (const auto& s : ck.model.layout().specs()) table.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  os << kCheckpointMagic << '\n' << header.dump() << '\n';
  const auto& p = ck.model.parameters();
  os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) throw ValidationError("not an aqt-checkpoint v1 file");
  if (!std::getline(is, line)) throw ValidationError("checkpoint header missing");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    Checkpoint ck{TransformerModel(config_from_json(header.at("config"))),
                  train_options_from_json(header.at("train_options")), header.at("provenance").get<std::string>()};
    const auto& table = header.at("parameters");
    const auto& specs = ck.model.layout().specs();
    if (table.size() != specs.size()) throw ValidationError("checkpoint parameter table does not match config");
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (table[i].at("name").get<std::string>() != specs[i].name ||
          table[i].at("rows").get<std::size_t>() != specs[i].rows ||
          table[i].at("cols").get<std::size_t>() != specs[i].cols) {
        throw ValidationError("checkpoint parameter '" + table[i].at("name").get<std::string>() +
                              "' does not match the expected layout");
      }
    }
    auto& p = ck.model.parameters();
    is.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (static_cast<std::size_t>(is.gcount()) != p.size() * sizeof(double)) {
      throw ValidationError("checkpoint parameter data is truncated");
    }
    if (!ck.model.all_finite()) throw NumericError("checkpoint contains non-finite parameters");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint header: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, ck);
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace aqt
