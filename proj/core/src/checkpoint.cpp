#include "polyseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace polyseg {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& is) {
  uint64_t n = read_u64(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

void write_named(std::ostream& os,
                 const std::vector<std::pair<std::string, std::vector<double>>>& xs) {
  write_u64(os, xs.size());
  for (const auto& [name, data] : xs) {
    write_string(os, name);
    write_doubles(os, data);
  }
}

std::vector<std::pair<std::string, std::vector<double>>> read_named(std::istream& is) {
  uint64_t n = read_u64(is);
  std::vector<std::pair<std::string, std::vector<double>>> xs;
  xs.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    xs.emplace_back(std::move(name), read_doubles(is));
  }
  return xs;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  write_u64(os, ckpt.version);
  write_string(os, ckpt.config_json);
  write_u64(os, static_cast<uint64_t>(ckpt.epoch));
  write_named(os, ckpt.params);
  write_named(os, ckpt.buffers);
  write_u64(os, static_cast<uint64_t>(ckpt.opt_steps));
  write_u64(os, ckpt.opt_m.size());
  for (const auto& m : ckpt.opt_m) write_doubles(os, m);
  write_u64(os, ckpt.opt_v.size());
  for (const auto& v : ckpt.opt_v) write_doubles(os, v);
  write_string(os, ckpt.rng_state);
  if (!os) throw std::runtime_error("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  Checkpoint ckpt;
  ckpt.version = static_cast<uint32_t>(read_u64(is));
  if (ckpt.version != 1)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(ckpt.version));
  ckpt.config_json = read_string(is);
  ckpt.epoch = static_cast<int64_t>(read_u64(is));
  ckpt.params = read_named(is);
  ckpt.buffers = read_named(is);
  ckpt.opt_steps = static_cast<int64_t>(read_u64(is));
  uint64_t nm = read_u64(is);
  for (uint64_t i = 0; i < nm; ++i) ckpt.opt_m.push_back(read_doubles(is));
  uint64_t nv = read_u64(is);
  for (uint64_t i = 0; i < nv; ++i) ckpt.opt_v.push_back(read_doubles(is));
  ckpt.rng_state = read_string(is);
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return ckpt;
}

Checkpoint snapshot(const SegModel& model, const optim::AdamW* opt,
                    int64_t epoch, const std::string& rng_state) {
  Checkpoint ckpt;
  ckpt.config_json = model.config().to_json();
  ckpt.epoch = epoch;
  for (const auto& [name, t] : model.named_parameters())
    ckpt.params.emplace_back(name, t.data());
  for (const auto& [name, t] : model.named_buffers())
    ckpt.buffers.emplace_back(name, t.data());
  if (opt) {
    ckpt.opt_steps = opt->steps();
    ckpt.opt_m = const_cast<optim::AdamW*>(opt)->exp_avg();
    ckpt.opt_v = const_cast<optim::AdamW*>(opt)->exp_avg_sq();
  }
  ckpt.rng_state = rng_state;
  return ckpt;
}

void restore(SegModel& model, optim::AdamW* opt, const Checkpoint& ckpt) {
  std::map<std::string, std::vector<double>> by_name(ckpt.params.begin(),
                                                     ckpt.params.end());
  for (auto& [name, t] : model.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint missing parameter " + name);
    if (it->second.size() != t.data().size())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    t.data() = it->second;
  }
  std::map<std::string, std::vector<double>> buf_by_name(ckpt.buffers.begin(),
                                                         ckpt.buffers.end());
  for (auto& [name, t] : model.named_buffers()) {
    auto it = buf_by_name.find(name);
    if (it == buf_by_name.end())
      throw std::runtime_error("checkpoint missing buffer " + name);
    if (it->second.size() != t.data().size())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    t.data() = it->second;
  }
  if (opt && !ckpt.opt_m.empty())
    opt->load_state(ckpt.opt_steps, ckpt.opt_m, ckpt.opt_v);
}

}  // namespace polyseg
