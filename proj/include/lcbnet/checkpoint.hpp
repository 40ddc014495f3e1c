// Model checkpoints.
//
//   LCBNET-CHECKPOINT 1\n
//   config <n>\n            followed by n `model.key = value` lines
//   params <count>\n
//   param <name> <rank> <d0> ...\n  followed by the values as f64le
//   ... (one block per parameter, in model order)
//   end\n
#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "lcbnet/config.hpp"
#include "lcbnet/errors.hpp"
#include "lcbnet/matrix_io.hpp"
#include "lcbnet/model.hpp"

namespace lcbnet {

inline constexpr const char* kCheckpointMagic = "LCBNET-CHECKPOINT 1";

inline void write_checkpoint(std::ostream& out, const LcbNet& model) {
  const std::string config = dump_model_config(model.config());
  std::size_t config_lines = 0;
  for (char ch : config) config_lines += ch == '\n';
  out << kCheckpointMagic << "\nconfig " << config_lines << '\n' << config;
  out << "params " << model.parameters().size() << '\n';
  for (const auto& p : model.parameters()) {
    out << "param " << p.name << ' ' << p.value.rank();
    for (std::size_t d : p.value.shape()) out << ' ' << d;
    out << '\n';
    detail::write_f64le(out, p.value.data());
  }
  out << "end\n";
}

inline void save_checkpoint(const LcbNet& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  write_checkpoint(out, model);
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline std::unique_ptr<LcbNet> read_checkpoint(std::istream& in,
                                               const std::string& what) {
  if (detail::expect_line(in, what) != kCheckpointMagic)
    throw DataError(what + ": not an LCB-net checkpoint (version 1)");
  auto header_count = [&](const char* tag) {
    std::istringstream line(detail::expect_line(in, what));
    std::string word;
    std::size_t n = 0;
    if (!(line >> word >> n) || word != tag)
      throw DataError(what + ": expected '" + tag + " <n>'");
    return n;
  };

  const std::size_t config_lines = header_count("config");
  std::ostringstream config_text;
  for (std::size_t i = 0; i < config_lines; ++i)
    config_text << detail::expect_line(in, what) << '\n';
  ModelConfig config;
  try {
    std::istringstream cin(config_text.str());
    RunConfig run;
    for (const auto& [key, value] : parse_config_lines(cin, what)) {
      if (key.rfind("model.", 0) != 0)
        throw ConfigError("unexpected key " + key);
      set_config_value(run, key, value);
    }
    config = run.model;
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(what + ": bad config block: " + e.what());
  }

  auto model = std::make_unique<LcbNet>(config, 0);
  const std::size_t count = header_count("params");
  if (count != model->parameters().size())
    throw DataError(what + ": parameter count does not match the architecture");
  for (auto& p : model->parameters()) {
    std::istringstream line(detail::expect_line(in, what));
    std::string tag, name;
    std::size_t rank = 0;
    line >> tag >> name >> rank;
    num::Shape shape(rank);
    for (std::size_t& d : shape) line >> d;
    if (!line || tag != "param" || name != p.name || shape != p.value.shape())
      throw DataError(what + ": unexpected parameter block for " + p.name);
    const std::vector<double> values =
        detail::read_f64le(in, p.value.size(), what);
    std::copy(values.begin(), values.end(), p.value.mutable_data().begin());
  }
  if (detail::expect_line(in, what) != "end")
    throw DataError(what + ": missing end marker");
  return model;
}

inline std::unique_ptr<LcbNet> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  return read_checkpoint(in, path);
}

}  // namespace lcbnet
