#include "gridfed/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "gridfed/dataset_io.hpp"
#include "gridfed/error.hpp"

namespace gridfed {

namespace {

constexpr const char* kHeader = "#gridfed-ckpt v1";

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string next_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(std::string("checkpoint: missing ") + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::string value_of(const std::string& token, const std::string& key) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0) throw ParseError("checkpoint: expected " + prefix + " in '" + token + "'");
  return token.substr(prefix.size());
}

long long int_of(const std::string& token, const std::string& key) {
  return parse_integer(value_of(token, key), "checkpoint " + key);
}

ObservationVector parse_bounds(const std::string& line, const std::string& key) {
  std::istringstream in(value_of(line, key));
  ObservationVector out{};
  std::string cell;
  std::size_t i = 0;
  while (std::getline(in, cell, ',')) {
    if (i >= out.size()) throw ParseError("checkpoint: too many " + key + " values");
    out[i++] = parse_decimal(cell, "checkpoint " + key);
  }
  if (i != out.size()) throw ParseError("checkpoint: too few " + key + " values");
  return out;
}

std::string format_bounds(const ObservationVector& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt17(v[i]);
  return out;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  if (ckpt.client_ids.size() != ckpt.policies.size()) throw DomainError("checkpoint: one id per policy required");
  if (ckpt.policies.empty()) throw DomainError("checkpoint: no policies");
  out << kHeader << "\n";
  out << "seed=" << ckpt.seed << " round=" << ckpt.round << " clients=" << ckpt.policies.size() << "\n";
  const std::string cfg = format_config(ckpt.config);
  std::size_t lines = 0;
  for (char c : cfg) lines += c == '\n' ? 1 : 0;
  out << "config=" << lines << "\n" << cfg;
  out << "stats_lo=" << format_bounds(ckpt.stats.lo) << "\n";
  out << "stats_hi=" << format_bounds(ckpt.stats.hi) << "\n";
  const ParamLayout& layout = ckpt.policies.front().layout;
  out << "layout=" << layout.segments.size() << "\n";
  for (const auto& s : layout.segments) {
    out << s.name << " " << s.offset << " " << s.length << " "
        << (s.visibility == Visibility::Public ? "public" : "private") << "\n";
  }
  for (std::size_t i = 0; i < ckpt.policies.size(); ++i) {
    const ParamVector& p = ckpt.policies[i];
    if (!(p.layout == layout)) throw DomainError("checkpoint: clients have different layouts");
    out << "client=" << ckpt.client_ids[i] << " count=" << p.size() << "\n";
    for (double v : p.values) out << fmt17(v) << "\n";
  }
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  write_checkpoint(ckpt, out);
}

Checkpoint read_checkpoint(std::istream& in) {
  if (next_line(in, "header") != kHeader) throw ParseError("checkpoint: bad header");
  Checkpoint ckpt;
  std::istringstream meta(next_line(in, "metadata"));
  std::string seed_tok, round_tok, clients_tok;
  meta >> seed_tok >> round_tok >> clients_tok;
  const long long seed = int_of(seed_tok, "seed");
  if (seed < 0) throw ParseError("checkpoint: negative seed");
  ckpt.seed = static_cast<std::uint64_t>(seed);
  ckpt.round = static_cast<int>(int_of(round_tok, "round"));
  const long long clients = int_of(clients_tok, "clients");
  if (clients < 1) throw ParseError("checkpoint: no clients");

  const long long cfg_lines = int_of(next_line(in, "config"), "config");
  std::string cfg_text;
  for (long long i = 0; i < cfg_lines; ++i) cfg_text += next_line(in, "config line") + "\n";
  std::istringstream cfg_in(cfg_text);
  try {
    ckpt.config = parse_config(cfg_in);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  ckpt.stats.lo = parse_bounds(next_line(in, "stats_lo"), "stats_lo");
  ckpt.stats.hi = parse_bounds(next_line(in, "stats_hi"), "stats_hi");

  ParamLayout layout;
  const long long segs = int_of(next_line(in, "layout"), "layout");
  for (long long i = 0; i < segs; ++i) {
    std::istringstream seg(next_line(in, "segment"));
    Segment s;
    std::string offset, length, vis;
    seg >> s.name >> offset >> length >> vis;
    s.offset = static_cast<std::size_t>(parse_integer(offset, "segment offset"));
    s.length = static_cast<std::size_t>(parse_integer(length, "segment length"));
    if (vis == "public") {
      s.visibility = Visibility::Public;
    } else if (vis == "private") {
      s.visibility = Visibility::Private;
    } else {
      throw ParseError("checkpoint: bad segment visibility '" + vis + "'");
    }
    layout.segments.push_back(std::move(s));
  }
  try {
    layout.check();
  } catch (const DomainError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  const Network net(ckpt.config.policy_network());
  if (!(net.layout() == layout)) throw ParseError("checkpoint: layout does not match the stored config");

  for (long long c = 0; c < clients; ++c) {
    std::istringstream head(next_line(in, "client"));
    std::string id_tok, count_tok;
    head >> id_tok >> count_tok;
    ckpt.client_ids.push_back(static_cast<int>(int_of(id_tok, "client")));
    const long long count = int_of(count_tok, "count");
    if (count != static_cast<long long>(layout.size())) throw ParseError("checkpoint: value count mismatch");
    ParamVector p{std::vector<double>(static_cast<std::size_t>(count)), layout};
    for (auto& v : p.values) v = parse_decimal(next_line(in, "value"), "checkpoint value");
    ckpt.policies.push_back(std::move(p));
  }
  return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace gridfed
