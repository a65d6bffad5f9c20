// SPDX-License-Identifier: Apache-2.0
#include "bitdiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bitdiff/errors.hpp"
#include "bitdiff/format.hpp"

namespace bitdiff {

namespace {

constexpr const char* kMagic = "bitdiff-checkpoint 1";

void write_doubles(std::ostream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    auto raw = std::bit_cast<std::uint64_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap64(raw);
    char bytes[8];
    std::memcpy(bytes, &raw, 8);
    out.write(bytes, 8);
  }
}

void read_doubles(std::istream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    char bytes[8];
    if (!in.read(bytes, 8)) throw ConfigError("checkpoint payload is truncated");
    std::uint64_t raw;
    std::memcpy(&raw, bytes, 8);
    if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap64(raw);
    data[i] = std::bit_cast<double>(raw);
  }
}

std::string diffusion_line(const DiffusionSpec& s) {
  return "sigma_min=" + format_double(s.sigma_min) + " sigma_max=" + format_double(s.sigma_max) +
         " sigma_data=" + format_double(s.sigma_data) + " data_center=" +
         format_double(s.data_center) + " logit_clip=" + format_double(s.logit_clip) +
         " rho=" + format_double(s.rho);
}

DiffusionSpec parse_diffusion(const std::string& line) {
  DiffusionSpec s;
  std::istringstream in(line);
  std::string item;
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed diffusion item: " + item);
    const std::string key = item.substr(0, eq);
    const double v = std::stod(item.substr(eq + 1));
    if (key == "sigma_min") s.sigma_min = v;
    else if (key == "sigma_max") s.sigma_max = v;
    else if (key == "sigma_data") s.sigma_data = v;
    else if (key == "data_center") s.data_center = v;
    else if (key == "logit_clip") s.logit_clip = v;
    else if (key == "rho") s.rho = v;
    else throw ConfigError("unknown diffusion key in checkpoint: " + key);
  }
  s.validate();
  return s;
}

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("checkpoint header ends before '" + key + "'");
  if (line.rfind(key, 0) != 0) {
    throw ConfigError("checkpoint header: expected '" + key + "', found '" + line + "'");
  }
  return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFileError("cannot write checkpoint " + path);
  out << kMagic << '\n';
  out << "net " << ck.params.config.serialize() << '\n';
  out << "diffusion " << diffusion_line(ck.spec) << '\n';
  out << "data vocab=" << ck.vocab.vocab_size << " tokens=" << ck.tokens << '\n';
  out << "step " << ck.step << '\n';
  out << "param_count " << ck.params.values.size() << '\n';
  for (const auto& v : ck.params.layout.views()) {
    out << "view " << v.name << ' ' << v.offset << ' ' << v.rows << ' ' << v.cols << '\n';
  }
  out << "schedule_records " << ck.schedule_records.size() << '\n';
  out << "end_header\n";
  write_doubles(out, ck.params.values.data(), ck.params.values.size());
  for (const auto& [sigma, error] : ck.schedule_records) {
    const double pair[2] = {sigma, error};
    write_doubles(out, pair, 2);
  }
  if (!out) throw MissingFileError("failed while writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw ConfigError("not a checkpoint: " + path);
  Checkpoint ck;
  try {
    const NetConfig net = NetConfig::parse(expect_line(in, "net"));
    ck.spec = parse_diffusion(expect_line(in, "diffusion"));
    {
      std::istringstream data(expect_line(in, "data"));
      std::string vocab_item, tokens_item;
      data >> vocab_item >> tokens_item;
      if (vocab_item.rfind("vocab=", 0) != 0 || tokens_item.rfind("tokens=", 0) != 0) {
        throw ConfigError("malformed checkpoint data line");
      }
      ck.vocab = VocabSpec::for_vocab(std::stoull(vocab_item.substr(6)));
      ck.tokens = std::stoull(tokens_item.substr(7));
    }
    ck.step = std::stoull(expect_line(in, "step"));
    const std::size_t count = std::stoull(expect_line(in, "param_count"));
    ck.params.config = net;
    ck.params.layout = ParamLayout::build(net);
    if (count != ck.params.layout.size()) {
      throw ConfigError("checkpoint parameter count does not match its network config");
    }
    for (const auto& v : ck.params.layout.views()) {
      std::istringstream view(expect_line(in, "view"));
      std::string name;
      std::size_t offset = 0, rows = 0, cols = 0;
      view >> name >> offset >> rows >> cols;
      if (name != v.name || offset != v.offset || rows != v.rows || cols != v.cols) {
        throw ConfigError("checkpoint view table disagrees at " + v.name);
      }
    }
    const std::size_t records = std::stoull(expect_line(in, "schedule_records"));
    expect_line(in, "end_header");
    ck.params.values.resize(count);
    read_doubles(in, ck.params.values.data(), count);
    ck.schedule_records.resize(records);
    for (auto& r : ck.schedule_records) {
      double pair[2];
      read_doubles(in, pair, 2);
      r = {pair[0], pair[1]};
    }
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ck;
}

}  // namespace bitdiff
