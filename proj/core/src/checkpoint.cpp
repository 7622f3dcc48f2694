#include "rarecp/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>
#include <vector>

#include "rarecp/error.hpp"

namespace rarecp {

namespace {

using Named = std::vector<std::pair<std::string, grad::Tensor*>>;

void add_mlp(Named& out, const std::string& prefix, Mlp& mlp) {
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    out.emplace_back(prefix + "/layer" + std::to_string(l) + "/weight", &mlp.layers[l].weight);
    out.emplace_back(prefix + "/layer" + std::to_string(l) + "/bias", &mlp.layers[l].bias);
  }
}

// Teacher maps are stored as tensors too; `storage` keeps them alive.
Named named_tensors(Checkpoint& c, std::vector<grad::Tensor>& storage) {
  Named out;
  for (std::size_t m = 0; m < c.model.experts.size(); ++m) {
    auto& e = c.model.experts[m];
    const std::string prefix = "expert" + std::to_string(m);
    out.emplace_back(prefix + "/embedding", &e.embedding);
    add_mlp(out, prefix, e.mlp);
  }
  out.emplace_back("gate/embedding", &c.model.gate.embedding);
  add_mlp(out, "gate", c.model.gate.mlp);
  storage.clear();
  storage.reserve(2 * c.teachers.maps.size());
  for (std::size_t m = 0; m < c.teachers.n_experts; ++m) {
    for (std::size_t d = 0; d < c.teachers.n_datasets; ++d) {
      const auto& map = c.teachers.at(m, d);
      storage.push_back(grad::Tensor::matrix(map.latent_dim, map.input_dim, map.A));
      storage.push_back(grad::Tensor::vector(map.b));
      const std::string prefix = "teacher" + std::to_string(m) + "/dataset" + std::to_string(d);
      out.emplace_back(prefix + "/B", &storage[storage.size() - 2]);
      out.emplace_back(prefix + "/c", &storage[storage.size() - 1]);
    }
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const std::size_t b = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("checkpoint: bad integer '" + std::string(s) + "'");
  }
  return v;
}

double parse_value(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("checkpoint: bad value '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  Checkpoint c = checkpoint;
  std::vector<grad::Tensor> storage;
  const Named tensors = named_tensors(c, storage);

  std::string out = "rarecp-checkpoint " + std::to_string(kCheckpointVersion) + "\n";
  out += "manifest n_experts " + std::to_string(c.model.n_experts()) + "\n";
  out += "manifest latent_dim " + std::to_string(c.config.train.expert.latent_dim) + "\n";
  out += "manifest context_dim " + std::to_string(c.model.context_dim()) + "\n";
  out += "manifest n_datasets " + std::to_string(c.model.n_datasets()) + "\n";
  out += "manifest tensors " + std::to_string(tensors.size()) + "\n";
  for (const auto& [k, v] : config_key_values(c.config)) out += "config " + k + " = " + v + "\n";
  for (const auto& [name, t] : tensors) {
    out += "tensor " + name + " " + std::to_string(t->rank());
    for (std::size_t d : t->shape()) out += " " + std::to_string(d);
    out += "\n";
    for (std::size_t i = 0; i < t->size(); ++i) {
      if (i) out += ' ';
      out += format_double((*t)[i]);
    }
    out += "\n";
  }
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    lines.push_back(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
  }
  if (lines.empty() || lines[0] != "rarecp-checkpoint " + std::to_string(kCheckpointVersion)) {
    throw DataError("not a version " + std::to_string(kCheckpointVersion) + " checkpoint");
  }
  std::map<std::string, std::size_t> manifest;
  Checkpoint c;
  std::size_t i = 1;
  for (; i < lines.size(); ++i) {
    const auto line = lines[i];
    if (line.starts_with("manifest ")) {
      const auto parts = split_ws(line);
      if (parts.size() != 3) throw DataError("checkpoint: malformed manifest line");
      manifest[std::string(parts[1])] = parse_size(parts[2]);
    } else if (line.starts_with("config ")) {
      const auto body = line.substr(7);
      const auto eq = body.find(" = ");
      if (eq == std::string_view::npos) throw DataError("checkpoint: malformed config line");
      try {
        apply_setting(c.config, body.substr(0, eq), body.substr(eq + 3));
      } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint config: ") + e.what());
      }
    } else {
      break;
    }
  }
  for (const char* key : {"n_experts", "latent_dim", "context_dim", "n_datasets", "tensors"}) {
    if (!manifest.contains(key)) throw DataError(std::string("checkpoint manifest lacks ") + key);
  }
  const std::size_t n_experts = manifest["n_experts"], p = manifest["context_dim"], n_datasets = manifest["n_datasets"];
  if (n_experts != c.config.train.n_experts || manifest["latent_dim"] != c.config.train.expert.latent_dim) {
    throw DataError("checkpoint manifest disagrees with its config");
  }

  // Skeleton with the right shapes; every value is overwritten below.
  for (std::size_t m = 0; m < n_experts; ++m) {
    c.model.experts.push_back(HypernetworkParams::init(c.config.train.expert, p, n_datasets, 0));
  }
  c.model.gate = GateParams::init(c.config.train.gate, p, n_experts, n_datasets, 0);
  c.model.normalize_contexts = c.config.train.normalize_contexts;
  c.teachers.n_experts = n_experts;
  c.teachers.n_datasets = n_datasets;
  c.teachers.maps.assign(n_experts * n_datasets, AffineMap::identity_like(c.config.train.expert.latent_dim, p));

  std::vector<grad::Tensor> storage;
  const Named tensors = named_tensors(c, storage);
  if (tensors.size() != manifest["tensors"]) throw DataError("checkpoint tensor count mismatch");
  std::map<std::string, grad::Tensor*> by_name(tensors.begin(), tensors.end());
  for (; i + 1 < lines.size() && lines[i].starts_with("tensor "); i += 2) {
    const auto head = split_ws(lines[i]);
    if (head.size() < 3) throw DataError("checkpoint: malformed tensor header");
    const std::string name(head[1]);
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: unexpected tensor " + name);
    grad::Tensor& t = *it->second;
    const std::size_t rank = parse_size(head[2]);
    std::vector<std::size_t> shape;
    for (std::size_t r = 0; r < rank && 3 + r < head.size(); ++r) shape.push_back(parse_size(head[3 + r]));
    if (shape != t.shape()) {
      throw DataError("checkpoint: tensor " + name + " has shape " + grad::shape_string(shape) + ", expected " +
                      grad::shape_string(t.shape()));
    }
    const auto values = split_ws(lines[i + 1]);
    if (values.size() != t.size()) throw DataError("checkpoint: tensor " + name + " has the wrong value count");
    for (std::size_t k = 0; k < values.size(); ++k) t[k] = parse_value(values[k]);
    by_name.erase(it);
  }
  if (!by_name.empty()) throw DataError("checkpoint: missing tensor " + by_name.begin()->first);
  if (i >= lines.size() || lines[i] != "end") throw DataError("checkpoint: missing end marker");

  for (std::size_t m = 0; m < n_experts; ++m) {
    for (std::size_t d = 0; d < n_datasets; ++d) {
      const grad::Tensor& a = storage[2 * (m * n_datasets + d)];
      const grad::Tensor& b = storage[2 * (m * n_datasets + d) + 1];
      auto& map = c.teachers.at(m, d);
      map.A = a.values();
      map.b = b.values();
    }
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

}  // namespace rarecp
