#include "spp/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "spp/errors.hpp"

namespace spp {

namespace {

constexpr const char* kMagic = "spp-checkpoint";
constexpr const char* kPathMagic = "spp-path";
constexpr const char* kStateMagic = "spp-state";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spill(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LookupError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

// Key=value manifest plus the byte offset of each line, for error reporting.
struct Manifest {
  std::map<std::string, std::string> kv;
  std::map<std::string, std::size_t> where;
  std::size_t body = 0;  // first byte after the "end" line

  const std::string& get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("missing key '" + key + "'", body);
    return it->second;
  }
  std::size_t get_size(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      auto n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ParseError("key '" + key + "' is not an unsigned integer: " + v, where.at(key));
    }
  }
  double get_double(const std::string& key) const {
    const auto& v = get(key);
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ParseError("key '" + key + "' is not a number: " + v, where.at(key));
    }
  }
};

Manifest parse_manifest(const std::string& bytes, const char* magic) {
  Manifest m;
  std::size_t pos = 0;
  bool first = true, closed = false;
  while (pos < bytes.size()) {
    auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw ParseError("unterminated manifest line", pos);
    std::string line = bytes.substr(pos, nl - pos);
    const std::size_t at = pos;
    pos = nl + 1;
    if (first) {
      if (line != magic) throw ParseError("bad magic, expected '" + std::string(magic) + "'", at);
      first = false;
      continue;
    }
    if (line == "end") {
      closed = true;
      break;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("malformed manifest line '" + line + "'", at);
    auto key = line.substr(0, eq);
    if (m.kv.count(key)) throw ParseError("duplicate key '" + key + "'", at);
    m.kv[key] = line.substr(eq + 1);
    m.where[key] = at;
  }
  if (first) throw ParseError("empty checkpoint", 0);
  if (!closed) throw ParseError("manifest has no 'end' line", bytes.size());
  m.body = pos;
  const auto version = m.get_size("version");
  if (version != static_cast<std::size_t>(kCheckpointVersion)) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version) + " (reader supports " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  return m;
}

std::vector<std::size_t> parse_size_list(const std::string& s, std::size_t at) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(static_cast<std::size_t>(std::stoull(tok, &used)));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("bad integer list entry '" + tok + "'", at);
    }
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

using NamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

NamedTensors model_tensors(const TransformerWeights& w) {
  NamedTensors out;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    const auto p = "L" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
      const auto ph = p + "h" + std::to_string(h) + ".";
      out.emplace_back(ph + "query", &layer.heads[h].query);
      out.emplace_back(ph + "key", &layer.heads[h].key);
      out.emplace_back(ph + "value", &layer.heads[h].value);
      out.emplace_back(ph + "proj", &layer.heads[h].proj);
    }
    out.emplace_back(p + "ffn_in", &layer.ffn_in);
    out.emplace_back(p + "ffn_bias", &layer.ffn_bias);
    out.emplace_back(p + "ffn_out", &layer.ffn_out);
  }
  out.emplace_back("head_weight", &w.head_weight);
  out.emplace_back("head_bias", &w.head_bias);
  return out;
}

void model_header(std::string& out, const TransformerWeights& w) {
  out += "activation=" + std::string(activation_name(w.activation)) + "\n";
  out += "model_dim=" + std::to_string(w.model_dim) + "\n";
  out += "classes=" + std::to_string(w.classes) + "\n";
  out += "layers=" + std::to_string(w.layers.size()) + "\n";
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    out += "layer." + std::to_string(l) + ".heads=" + std::to_string(w.layers[l].heads.size()) + "\n";
    out += "layer." + std::to_string(l) + ".score_dim=" + fmt_double(w.layers[l].score_dim) + "\n";
  }
}

void append_blobs(std::string& out, const NamedTensors& tensors) {
  for (const auto& [name, t] : tensors) {
    append_u64(out, name.size());
    out += name;
    out += encode_tensor_blob(*t);
  }
}

std::map<std::string, Tensor> read_blobs(const std::string& bytes, std::size_t& offset, std::size_t count) {
  std::map<std::string, Tensor> out;
  std::span<const char> view(bytes.data(), bytes.size());
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = offset;
    const auto len = decode_u64(view, offset);
    if (len > 4096 || offset + len > bytes.size()) throw ParseError("bad tensor name length", at);
    std::string name = bytes.substr(offset, len);
    offset += len;
    if (out.count(name)) throw ParseError("duplicate tensor '" + name + "'", at);
    out.emplace(std::move(name), decode_tensor_blob(view, offset));
  }
  if (offset != bytes.size()) throw ParseError("trailing bytes after tensors", offset);
  return out;
}

TransformerWeights model_from(const Manifest& m, std::map<std::string, Tensor>& blobs) {
  TransformerWeights w;
  try {
    w.activation = parse_activation(m.get("activation"));
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), m.where.at("activation"));
  }
  w.model_dim = m.get_size("model_dim");
  w.classes = m.get_size("classes");
  const auto layers = m.get_size("layers");
  auto take = [&](const std::string& name) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw ParseError("missing tensor '" + name + "'", m.body);
    Tensor t = std::move(it->second);
    blobs.erase(it);
    return t;
  };
  for (std::size_t l = 0; l < layers; ++l) {
    TransformerLayer layer;
    const auto key = "layer." + std::to_string(l);
    const auto heads = m.get_size(key + ".heads");
    layer.score_dim = m.get_double(key + ".score_dim");
    const auto p = "L" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < heads; ++h) {
      const auto ph = p + "h" + std::to_string(h) + ".";
      AttentionHead head;
      head.query = take(ph + "query");
      head.key = take(ph + "key");
      head.value = take(ph + "value");
      head.proj = take(ph + "proj");
      layer.heads.push_back(std::move(head));
    }
    layer.ffn_in = take(p + "ffn_in");
    layer.ffn_bias = take(p + "ffn_bias");
    layer.ffn_out = take(p + "ffn_out");
    w.layers.push_back(std::move(layer));
  }
  w.head_weight = take("head_weight");
  w.head_bias = take("head_bias");
  try {
    w.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("inconsistent model: ") + e.what(), m.body);
  }
  return w;
}

}  // namespace

void write_model_checkpoint(const TransformerWeights& model, const std::string& path) {
  model.validate();
  auto tensors = model_tensors(model);
  std::string out = std::string(kMagic) + "\nversion=" + std::to_string(kCheckpointVersion) + "\nkind=model\n";
  model_header(out, model);
  out += "tensors=" + std::to_string(tensors.size()) + "\nend\n";
  append_blobs(out, tensors);
  spill(path, out);
}

TransformerWeights read_model_checkpoint(const std::string& path) {
  const auto bytes = slurp(path);
  auto m = parse_manifest(bytes, kMagic);
  if (m.get("kind") != "model" && m.get("kind") != "member") {
    throw ParseError("unknown checkpoint kind '" + m.get("kind") + "'", m.where.at("kind"));
  }
  std::size_t off = m.body;
  auto blobs = read_blobs(bytes, off, m.get_size("tensors"));
  return model_from(m, blobs);
}

void write_checkpoint(const FamilyMember& member, std::size_t tokens, const std::string& path) {
  const auto& w = member.model.weights;
  w.validate();
  const auto& layout = member.mask.layout;
  if (member.model.retained.size() != layout.segments().size()) {
    throw ShapeError("retained index lists do not match the mask layout");
  }
  auto tensors = model_tensors(w);
  const Tensor mask = Tensor::vector(member.mask.values);
  tensors.emplace_back("mask", &mask);

  std::string out = std::string(kMagic) + "\nversion=" + std::to_string(kCheckpointVersion) + "\nkind=member\n";
  model_header(out, w);
  out += "tokens=" + std::to_string(tokens) + "\n";
  out += "requested_step=" + std::to_string(member.requested_step) + "\n";
  out += "source_step=" + std::to_string(member.source_step) + "\n";
  out += std::string("finetuned=") + (member.finetuned ? "1" : "0") + "\n";
  for (const auto& [k, v] : member.metrics) {
    if (k.find_first_of("=\n") != std::string::npos) throw ValidationError("metric name '" + k + "' is not storable");
    out += "metric." + k + "=" + fmt_double(v) + "\n";
  }
  out += "mask.layers=" + std::to_string(layout.layers()) + "\n";
  out += "mask.model_dim=" + std::to_string(layout.model_dim()) + "\n";
  out += "segments=" + std::to_string(layout.segments().size()) + "\n";
  for (std::size_t i = 0; i < layout.segments().size(); ++i) {
    const auto& s = layout.segments()[i];
    out += "segment." + std::to_string(i) + "=" + std::to_string(s.layer) + "," + pair_kind_name(s.kind) + "," +
           std::to_string(s.head) + "," + std::to_string(s.offset) + "," + std::to_string(s.length) + "\n";
    out += "retained." + std::to_string(i) + "=" + join_sizes(member.model.retained[i]) + "\n";
  }
  out += "tensors=" + std::to_string(tensors.size()) + "\nend\n";
  append_blobs(out, tensors);
  spill(path, out);
}

FamilyMember read_checkpoint(const std::string& path) {
  const auto bytes = slurp(path);
  auto m = parse_manifest(bytes, kMagic);
  if (m.get("kind") != "member") throw ParseError("not a family member checkpoint", m.where.at("kind"));
  std::size_t off = m.body;
  auto blobs = read_blobs(bytes, off, m.get_size("tensors"));

  FamilyMember member;
  auto mask_it = blobs.find("mask");
  if (mask_it == blobs.end()) throw ParseError("missing tensor 'mask'", m.body);
  member.mask.values = mask_it->second.values();
  blobs.erase(mask_it);
  member.model.weights = model_from(m, blobs);
  if (!blobs.empty()) throw ParseError("unexpected tensor '" + blobs.begin()->first + "'", m.body);

  member.requested_step = m.get_size("requested_step");
  member.source_step = m.get_size("source_step");
  const auto& ft = m.get("finetuned");
  if (ft != "0" && ft != "1") throw ParseError("finetuned must be 0 or 1", m.where.at("finetuned"));
  member.finetuned = ft == "1";
  for (const auto& [k, v] : m.kv) {
    if (k.rfind("metric.", 0) == 0) member.metrics[k.substr(7)] = m.get_double(k);
  }

  const auto nseg = m.get_size("segments");
  std::vector<MaskSegment> segs;
  for (std::size_t i = 0; i < nseg; ++i) {
    const auto key = "segment." + std::to_string(i);
    const auto at = m.where.count(key) ? m.where.at(key) : m.body;
    std::stringstream ss(m.get(key));
    std::vector<std::string> parts;
    std::string tok;
    while (std::getline(ss, tok, ',')) parts.push_back(tok);
    if (parts.size() != 5) throw ParseError("segment line needs 5 fields", at);
    MaskSegment s;
    try {
      s.kind = parse_pair_kind(parts[1]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), at);
    }
    auto nums = parse_size_list(parts[0] + "," + parts[2] + "," + parts[3] + "," + parts[4], at);
    s.layer = nums[0];
    s.head = nums[1];
    s.offset = nums[2];
    s.length = nums[3];
    segs.push_back(s);
    const auto rkey = "retained." + std::to_string(i);
    member.model.retained.push_back(parse_size_list(m.get(rkey), m.where.count(rkey) ? m.where.at(rkey) : m.body));
  }
  try {
    member.mask.layout = MaskLayout::from_segments(std::move(segs), m.get_size("mask.layers"), m.get_size("mask.model_dim"));
    member.mask.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("inconsistent mask: ") + e.what(), m.body);
  }
  member.cost = count_cost(member.model.weights, m.get_size("tokens"));
  return member;
}

void write_solution_path(const SolutionPath& path, const std::string& file) {
  const auto& layout = path.layout();
  std::string out = std::string(kPathMagic) + "\nversion=" + std::to_string(kCheckpointVersion) +
                    "\nstride=" + std::to_string(path.stride()) + "\nlayers=" + std::to_string(layout.layers()) +
                    "\nmodel_dim=" + std::to_string(layout.model_dim()) +
                    "\nsegments=" + std::to_string(layout.segments().size()) +
                    "\nsnapshots=" + std::to_string(path.snapshots().size()) + "\nend\n";
  for (const auto& s : layout.segments()) {
    append_u64(out, s.layer);
    append_u64(out, static_cast<std::uint64_t>(s.kind));
    append_u64(out, s.head);
    append_u64(out, s.offset);
    append_u64(out, s.length);
  }
  for (const auto& snap : path.snapshots()) {
    append_u64(out, snap.step);
    out += encode_tensor_blob(Tensor::vector(snap.gamma));
  }
  spill(file, out);
}

SolutionPath read_solution_path(const std::string& file) {
  const auto bytes = slurp(file);
  auto m = parse_manifest(bytes, kPathMagic);
  std::span<const char> view(bytes.data(), bytes.size());
  std::size_t off = m.body;
  std::vector<MaskSegment> segs;
  const auto nseg = m.get_size("segments");
  for (std::size_t i = 0; i < nseg; ++i) {
    MaskSegment s;
    s.layer = decode_u64(view, off);
    const auto at = off;
    const auto kind = decode_u64(view, off);
    if (kind > 2) throw ParseError("bad pair kind", at);
    s.kind = static_cast<PairKind>(kind);
    s.head = decode_u64(view, off);
    s.offset = decode_u64(view, off);
    s.length = decode_u64(view, off);
    segs.push_back(s);
  }
  std::vector<Snapshot> snaps;
  const auto nsnap = m.get_size("snapshots");
  for (std::size_t i = 0; i < nsnap; ++i) {
    Snapshot s;
    s.step = decode_u64(view, off);
    const auto at = off;
    auto g = decode_tensor_blob(view, off);
    if (g.rank() != 1) throw ParseError("gamma snapshot must be a vector", at);
    s.gamma = g.values();
    snaps.push_back(std::move(s));
  }
  if (off != bytes.size()) throw ParseError("trailing bytes after snapshots", off);
  try {
    auto layout = MaskLayout::from_segments(std::move(segs), m.get_size("layers"), m.get_size("model_dim"));
    return SolutionPath::from_snapshots(std::move(layout), m.get_size("stride"), std::move(snaps));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("inconsistent solution path: ") + e.what(), m.body);
  }
}

void write_search_state(const SearchState& state, const std::string& file) {
  std::string out = std::string(kStateMagic) + "\nversion=" + std::to_string(kCheckpointVersion) +
                    "\nstep=" + std::to_string(state.step) + "\nend\n";
  out += encode_tensor_blob(Tensor::vector(state.mask));
  out += encode_tensor_blob(Tensor::vector(state.subgrad));
  out += encode_tensor_blob(Tensor::vector(state.gamma));
  spill(file, out);
}

SearchState read_search_state(const std::string& file) {
  const auto bytes = slurp(file);
  auto m = parse_manifest(bytes, kStateMagic);
  std::span<const char> view(bytes.data(), bytes.size());
  std::size_t off = m.body;
  SearchState s;
  s.step = m.get_size("step");
  s.mask = decode_tensor_blob(view, off).values();
  s.subgrad = decode_tensor_blob(view, off).values();
  s.gamma = decode_tensor_blob(view, off).values();
  if (off != bytes.size()) throw ParseError("trailing bytes after search state", off);
  if (s.mask.size() != s.subgrad.size() || s.mask.size() != s.gamma.size()) {
    throw ParseError("search state vectors differ in length", m.body);
  }
  return s;
}

}  // namespace spp
