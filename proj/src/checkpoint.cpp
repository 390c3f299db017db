#include "affectlab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "affectlab/error.hpp"
#include "text_util.hpp"

namespace affectlab::nn {

namespace {

constexpr char kMagic[] = "AFLB1";
constexpr std::size_t kMagicLen = 5;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string str(std::uint64_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  std::size_t pos() const { return pos_; }

private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() || pos_ > bytes_.size() - n) throw CorruptCheckpoint("checkpoint truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct PendingBlock {
  std::string name;
  Shape shape;
  const std::vector<double>* data;
  int width;
};

}  // namespace

const NamedBlock* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const AdamState* adam, std::uint64_t epoch,
                     const std::map<std::string, std::string>& extra, int param_width) {
  if (param_width != 4 && param_width != 8) throw UsageError("checkpoint element width must be 4 or 8");
  std::string meta = serialize_spec(model.spec());
  meta += "epoch = " + std::to_string(epoch) + "\n";
  meta += std::string("optimizer = ") + (adam ? "adam" : "none") + "\n";
  if (adam) {
    meta += "adam.step = " + std::to_string(adam->step) + "\n";
    meta += "adam.lr = " + fmt_double(adam->lr) + "\n";
    meta += "adam.beta1 = " + fmt_double(adam->beta1) + "\n";
    meta += "adam.beta2 = " + fmt_double(adam->beta2) + "\n";
    meta += "adam.eps = " + fmt_double(adam->eps) + "\n";
  }
  for (const auto& [k, v] : extra) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw UsageError("checkpoint metadata key/value contains a reserved character: " + k);
    meta += "extra." + k + " = " + v + "\n";
  }

  std::vector<PendingBlock> blocks;
  for (Parameter* p : model.parameters()) blocks.push_back({p->name, p->value.shape(), &p->value.storage(), param_width});
  if (adam) {
    for (const auto& [name, t] : adam->m) blocks.push_back({"adam.m/" + name, t.shape(), &t.storage(), 8});
    for (const auto& [name, t] : adam->v) blocks.push_back({"adam.v/" + name, t.shape(), &t.storage(), 8});
  }

  std::string header(kMagic, kMagicLen);
  put_str(header, meta);
  put_u64(header, blocks.size());
  // Offsets are absolute, so the table size must be known first.
  std::size_t table_size = 0;
  for (const auto& b : blocks) table_size += 8 + b.name.size() + 8 + 8 * b.shape.size() + 16;
  std::uint64_t offset = header.size() + table_size;
  std::string table;
  for (const auto& b : blocks) {
    put_str(table, b.name);
    put_u64(table, b.shape.size());
    for (std::size_t d : b.shape) put_u64(table, d);
    put_u64(table, offset);
    put_u64(table, static_cast<std::uint64_t>(b.width));
    offset += b.data->size() * static_cast<std::size_t>(b.width);
  }
  std::string payload;
  payload.reserve(offset - header.size() - table.size());
  for (const auto& b : blocks) {
    for (double v : *b.data) {
      if (b.width == 8) {
        put_u64(payload, std::bit_cast<std::uint64_t>(v));
      } else {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int i = 0; i < 4; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
      }
    }
  }
  detail::write_file_atomic(path, header + table + payload);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const IOError& e) {
    throw CorruptCheckpoint(e.what());
  }
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0)
    throw CorruptCheckpoint(path.string() + ": bad magic");
  Reader r(bytes);
  r.str(kMagicLen);
  const std::string meta = r.str(r.u64());

  std::map<std::string, std::string> kv;
  std::size_t line_no = 0;
  for (auto line : detail::split(meta, '\n')) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CorruptCheckpoint("metadata line " + std::to_string(line_no) + " has no '='");
    kv[std::string(detail::trim(line.substr(0, eq)))] = std::string(detail::trim(line.substr(eq + 1)));
  }

  Checkpoint ck;
  try {
    ck.spec = parse_spec(kv);
    infer_shapes(ck.spec);
  } catch (const Error& e) {
    throw CorruptCheckpoint(std::string("model spec: ") + e.what());
  }
  const auto epoch = detail::parse_int(kv["epoch"]);
  if (!epoch || *epoch < 0) throw CorruptCheckpoint("missing or bad epoch");
  ck.epoch = static_cast<std::uint64_t>(*epoch);
  const bool has_adam = kv["optimizer"] == "adam";
  if (has_adam) {
    AdamState s;
    const auto step = detail::parse_int(kv["adam.step"]);
    const auto lr = detail::parse_double(kv["adam.lr"]);
    const auto b1 = detail::parse_double(kv["adam.beta1"]);
    const auto b2 = detail::parse_double(kv["adam.beta2"]);
    const auto eps = detail::parse_double(kv["adam.eps"]);
    if (!step || !lr || !b1 || !b2 || !eps) throw CorruptCheckpoint("bad optimizer metadata");
    s.step = static_cast<std::uint64_t>(*step);
    s.lr = *lr;
    s.beta1 = *b1;
    s.beta2 = *b2;
    s.eps = *eps;
    ck.adam = std::move(s);
  }
  for (const auto& [k, v] : kv)
    if (k.rfind("extra.", 0) == 0) ck.extra[k.substr(6)] = v;

  const std::uint64_t count = r.u64();
  if (count > bytes.size()) throw CorruptCheckpoint("implausible block count");
  std::uint64_t end = r.pos();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, width;
  };
  std::vector<Entry> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(r.u64());
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw CorruptCheckpoint("block " + e.name + ": implausible rank");
    for (std::uint64_t d = 0; d < rank; ++d) e.shape.push_back(r.u64());
    e.offset = r.u64();
    e.width = r.u64();
    if (e.width != 4 && e.width != 8) throw CorruptCheckpoint("block " + e.name + ": bad element width");
    entries.push_back(std::move(e));
  }
  end = r.pos();
  for (const auto& e : entries) {
    const std::uint64_t n = shape_size(e.shape);
    if (e.offset < end || e.offset > bytes.size() || n > (bytes.size() - e.offset) / e.width)
      throw CorruptCheckpoint("block " + e.name + ": payload outside file (truncated?)");
    std::vector<double> data(n);
    const char* p = bytes.data() + e.offset;
    for (std::uint64_t i = 0; i < n; ++i) {
      if (e.width == 8) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i * 8 + b])) << (8 * b);
        data[i] = std::bit_cast<double>(bits);
      } else {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i * 4 + b])) << (8 * b);
        data[i] = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
    if (e.name.rfind("adam.m/", 0) == 0 || e.name.rfind("adam.v/", 0) == 0) {
      if (!ck.adam) throw CorruptCheckpoint("optimizer moments present without optimizer metadata");
      auto& target = e.name[5] == 'm' ? ck.adam->m : ck.adam->v;
      target[e.name.substr(7)] = Tensor(e.shape, std::move(data));
    } else {
      ck.blocks.push_back({e.name, e.shape, std::move(data)});
    }
  }
  std::uint64_t payload_end = end;
  for (const auto& e : entries) payload_end = std::max<std::uint64_t>(payload_end, e.offset + shape_size(e.shape) * e.width);
  if (payload_end != bytes.size()) throw CorruptCheckpoint("trailing or missing bytes after payloads");
  return ck;
}

void restore_parameters(Model& model, const Checkpoint& ckpt) {
  if (!(ckpt.spec == model.spec()))
    throw SpecMismatch("checkpoint model spec '" + ckpt.spec.name + "' differs from model spec '" + model.spec().name + "'");
  const auto params = model.parameters();
  for (Parameter* p : params) {
    const NamedBlock* b = ckpt.find(p->name);
    if (!b) throw SpecMismatch("checkpoint lacks parameter block " + p->name);
    if (b->shape != p->value.shape())
      throw SpecMismatch("block " + p->name + " has shape " + shape_string(b->shape) + ", expected " +
                         shape_string(p->value.shape()));
  }
  if (ckpt.blocks.size() != params.size()) throw SpecMismatch("checkpoint has extra parameter blocks");
  for (Parameter* p : params) p->value = Tensor(p->value.shape(), ckpt.find(p->name)->data);
}

WarmStartResult warm_start(Model& model, const Checkpoint& ckpt, const std::string& match_prefix,
                           const std::vector<std::string>& freeze_prefixes) {
  WarmStartResult res;
  for (const auto& b : ckpt.blocks) {
    if (b.name.rfind(match_prefix, 0) != 0) continue;
    Parameter* p = model.find(b.name);
    if (!p) {
      res.skipped.push_back(b.name + ": not in model");
      continue;
    }
    if (p->value.shape() != b.shape) {
      res.skipped.push_back(b.name + ": shape " + shape_string(b.shape) + " vs model " + shape_string(p->value.shape()));
      continue;
    }
    p->value = Tensor(b.shape, b.data);
    ++res.loaded;
  }
  for (Parameter* p : model.parameters())
    for (const auto& prefix : freeze_prefixes)
      if (!prefix.empty() && p->name.rfind(prefix, 0) == 0) {
        p->trainable = false;
        ++res.frozen;
        break;
      }
  return res;
}

}  // namespace affectlab::nn
