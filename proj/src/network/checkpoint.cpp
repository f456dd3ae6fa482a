#include "fpad/network/checkpoint.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fpad/errors.hpp"
#include "fpad/tensorcore/serialize.hpp"

namespace fpad::network {

namespace {

constexpr const char* kMagic = "fpad-checkpoint 1";
constexpr const char* kSeparator = "---";

const std::set<std::string> kReservedKeys = {"head.s", "head.m", "center.alpha", "loss.lambda"};

bool reserved(const std::string& key) { return key.starts_with("net.") || kReservedKeys.count(key) != 0; }

std::vector<std::pair<std::string, const Tensor*>> tensors_of(const Checkpoint& c) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [name, t] : c.net.params) out.emplace_back(name, &t);
  for (const auto& [name, s] : c.net.bn) {
    out.emplace_back(name + ".running_mean", &s.running_mean);
    out.emplace_back(name + ".running_var", &s.running_var);
  }
  out.emplace_back("head.weight", &c.net.head.weights);
  out.emplace_back("center.centers", &c.bank.centers);
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  KeyValues kv;
  for (const auto& [k, v] : c.meta.entries()) {
    if (reserved(k)) throw UsageError("checkpoint metadata key '" + k + "' is reserved");
    kv.set(k, v);
  }
  kv.merge(c.net.config.to_kv());
  kv.set("head.s", c.net.head.s);
  kv.set("head.m", c.net.head.m);
  kv.set("center.alpha", c.bank.alpha);
  kv.set("loss.lambda", c.lambda);

  out << kMagic << '\n' << kv.render() << kSeparator << '\n';
  const auto tensors = tensors_of(c);
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, *t);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IoError("not a checkpoint (bad header line)");
  std::string header;
  bool closed = false;
  while (std::getline(in, line)) {
    if (line == kSeparator) {
      closed = true;
      break;
    }
    header += line;
    header += '\n';
  }
  if (!closed) throw IoError("checkpoint header is not terminated");

  const KeyValues kv = KeyValues::parse(header);
  Checkpoint c;
  const NetworkConfig config = NetworkConfig::from_kv(kv);
  c.net = build(config, 0);
  c.net.head.s = kv.get_double("head.s");
  c.net.head.m = kv.get_double("head.m");
  c.net.head.validate();
  c.bank = losses::CenterBank::zeros(static_cast<std::size_t>(config.classes),
                                     static_cast<std::size_t>(config.embedding_dim), kv.get_double("center.alpha"));
  c.lambda = kv.get_double("loss.lambda");
  for (const auto& [k, v] : kv.entries()) {
    if (!reserved(k)) c.meta.set(k, v);
  }

  std::map<std::string, Tensor*> slots;
  for (auto& [name, t] : c.net.params) slots[name] = &t;
  for (auto& [name, s] : c.net.bn) {
    slots[name + ".running_mean"] = &s.running_mean;
    slots[name + ".running_var"] = &s.running_var;
  }
  slots["head.weight"] = &c.net.head.weights;
  slots["center.centers"] = &c.bank.centers;

  const std::uint32_t count = read_u32(in);
  if (count != slots.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                  std::to_string(slots.size()));
  }
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(in);
    if (len > 4096) throw IoError("checkpoint tensor name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint");
    auto it = slots.find(name);
    if (it == slots.end()) throw IoError("unexpected tensor '" + name + "' in checkpoint");
    if (!seen.insert(name).second) throw IoError("duplicate tensor '" + name + "' in checkpoint");
    Tensor t = read_tensor(in);
    if (t.shape() != it->second->shape()) {
      throw IoError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                    shape_str(it->second->shape()));
    }
    if (!t.all_finite()) throw IoError("tensor '" + name + "' holds non-finite values");
    t.requires_grad = it->second->requires_grad;
    *it->second = std::move(t);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace fpad::network
