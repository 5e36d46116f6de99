#include "ptq/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ptq/error.hpp"

namespace ptq {

namespace {

static_assert(sizeof(float) == 4);

void append_le32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

void write_f32_le(std::ostream& out, std::span<const float> values) {
  std::string buf;
  buf.reserve(values.size() * 4);
  for (float f : values) append_le32(buf, std::bit_cast<std::uint32_t>(f));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void ContainerWriter::add_f32(const std::string& name, std::size_t rows, std::size_t cols,
                              std::span<const float> values) {
  if (values.size() != rows * cols) throw ShapeError("tensor '" + name + "' size mismatch");
  tensors_.push_back({{"name", name}, {"dtype", "f32"}, {"rows", rows}, {"cols", cols}, {"offset", blob_.size()}});
  for (float f : values) append_le32(blob_, std::bit_cast<std::uint32_t>(f));
}

void ContainerWriter::add_u8(const std::string& name, std::size_t rows, std::size_t cols,
                             std::span<const std::uint8_t> values) {
  if (values.size() != rows * cols) throw ShapeError("tensor '" + name + "' size mismatch");
  tensors_.push_back({{"name", name}, {"dtype", "u8"}, {"rows", rows}, {"cols", cols}, {"offset", blob_.size()}});
  blob_.append(reinterpret_cast<const char*>(values.data()), values.size());
}

void ContainerWriter::write(const std::filesystem::path& path, const char* magic, Json header) const {
  header["tensors"] = tensors_;
  const std::string h = header.dump();
  std::string prefix(magic, 8);
  const std::uint64_t len = h.size();
  for (int i = 0; i < 8; ++i) prefix.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << prefix << h;
  out.write(blob_.data(), static_cast<std::streamsize>(blob_.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

ContainerReader::ContainerReader(const std::filesystem::path& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 16 || all.compare(0, 8, magic, 8) != 0) {
    throw DataError(path.string() + ": not a " + std::string(magic, 8) + " container");
  }
  const std::uint64_t len = read_le64(reinterpret_cast<const unsigned char*>(all.data() + 8));
  if (len > all.size() - 16) throw DataError(path.string() + ": truncated header");
  try {
    header_ = Json::parse(all.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  blob_ = all.substr(16 + len);
}

bool ContainerReader::has(const std::string& name) const {
  for (const auto& t : header_.at("tensors"))
    if (t.at("name") == name) return true;
  return false;
}

const Json& ContainerReader::entry(const std::string& name, const char* dtype) const {
  for (const auto& t : header_.at("tensors")) {
    if (t.at("name") != name) continue;
    if (t.at("dtype") != dtype) throw DataError("tensor '" + name + "' has dtype " + t.at("dtype").dump());
    const std::size_t bytes = t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>() *
                              (std::string(dtype) == "f32" ? 4 : 1);
    if (t.at("offset").get<std::size_t>() + bytes > blob_.size()) throw DataError("tensor '" + name + "' truncated");
    return t;
  }
  throw DataError("container has no tensor '" + name + "'");
}

std::vector<float> ContainerReader::f32_vector(const std::string& name) const {
  const Json& t = entry(name, "f32");
  const std::size_t n = t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
  const auto* p = reinterpret_cast<const unsigned char*>(blob_.data() + t.at("offset").get<std::size_t>());
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | p[4 * i + b];
    out[i] = std::bit_cast<float>(v);
  }
  return out;
}

Matrix ContainerReader::f32(const std::string& name) const {
  const Json& t = entry(name, "f32");
  return Matrix(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>(), f32_vector(name));
}

std::vector<std::uint8_t> ContainerReader::u8(const std::string& name) const {
  const Json& t = entry(name, "u8");
  const std::size_t n = t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
  const auto* p = reinterpret_cast<const std::uint8_t*>(blob_.data() + t.at("offset").get<std::size_t>());
  return std::vector<std::uint8_t>(p, p + n);
}

// ---------------------------------------------------------------- model

namespace {

Json layout_json(const GroupLayout& l) {
  return Json{{"rows", l.rows},
              {"cols", l.cols},
              {"group_cols", l.group_cols},
              {"groups_per_row", l.groups_per_row},
              {"whole_tensor", l.whole_tensor}};
}

GroupLayout layout_from_json(const Json& j) {
  GroupLayout l;
  l.rows = j.at("rows").get<std::size_t>();
  l.cols = j.at("cols").get<std::size_t>();
  l.group_cols = j.at("group_cols").get<std::size_t>();
  l.groups_per_row = j.at("groups_per_row").get<std::size_t>();
  l.whole_tensor = j.at("whole_tensor").get<bool>();
  return l;
}

Json params_json(const QuantParams& p) {
  Json g = Json::array();
  for (const auto& gp : p.groups) g.push_back(to_json(gp));
  return g;
}

LinearMode parse_mode(const std::string& s) {
  if (s == "fp") return LinearMode::fp;
  if (s == "weight_only") return LinearMode::weight_only;
  if (s == "weight_activation") return LinearMode::weight_activation;
  throw DataError("unknown layer mode '" + s + "'");
}

}  // namespace

void save_model(const TinyDecoder& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.config();
  ContainerWriter w;
  w.add_f32("embedding", model.embedding().rows(), model.embedding().cols(), model.embedding().data());
  w.add_f32("positions", model.positions().rows(), model.positions().cols(), model.positions().data());
  w.add_f32("final_norm", 1, cfg.d_model, model.final_norm());
  Json layers = Json::object();
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    const Block& blk = model.blocks()[b];
    const std::string p = "blk" + std::to_string(b) + ".";
    w.add_f32(p + "norm1", 1, cfg.d_model, blk.norm1);
    w.add_f32(p + "norm2", 1, cfg.d_model, blk.norm2);
    for (const auto* l : blk.linears()) {
      const Matrix& wt = l->weight();
      w.add_f32(l->id() + ".weight", wt.rows(), wt.cols(), wt.data());
      Json meta{{"mode", to_string(l->mode())}};
      if (l->mode() != LinearMode::fp) {
        meta["w_spec"] = to_json(l->w_spec());
        if (l->mode() == LinearMode::weight_activation) meta["a_spec"] = to_json(l->a_spec());
        if (l->act_params()) meta["act_params"] = to_json(*l->act_params());
        meta["act_keep"] = l->act_keep();
        meta["dynamic_outliers"] = l->dynamic_outliers();
        w.add_f32(l->id() + ".w_hat", l->weight_hat().rows(), l->weight_hat().cols(), l->weight_hat().data());
        if (!l->input_divisor().empty()) w.add_f32(l->id() + ".divisor", 1, wt.cols(), l->input_divisor());
        if (l->codes()) {
          const QuantizedTensor& q = *l->codes();
          w.add_u8(l->id() + ".codes", q.rows, q.cols, q.codes);
          meta["layout"] = layout_json(q.params.layout);
          meta["params"] = params_json(q.params);
        }
      }
      layers[l->id()] = meta;
    }
  }
  Json header{{"format", "tmw"}, {"version", 1}, {"config", to_json(cfg)}, {"layers", layers}};
  w.write(path, kModelMagic, header);
}

TinyDecoder load_model(const std::filesystem::path& path) {
  ContainerReader r(path, kModelMagic);
  const Json& h = r.header();
  TinyDecoder m;
  try {
    m = TinyDecoder(model_config_from_json(h.at("config")));
    m.embedding() = r.f32("embedding");
    m.positions() = r.f32("positions");
    m.final_norm() = r.f32_vector("final_norm");
    for (std::size_t b = 0; b < m.blocks().size(); ++b) {
      Block& blk = m.blocks()[b];
      const std::string p = "blk" + std::to_string(b) + ".";
      blk.norm1 = r.f32_vector(p + "norm1");
      blk.norm2 = r.f32_vector(p + "norm2");
      for (auto* l : blk.linears()) {
        Matrix wt = r.f32(l->id() + ".weight");
        if (wt.rows() != l->weight().rows() || wt.cols() != l->weight().cols()) {
          throw DataError(l->id() + ": stored weight shape does not match the config");
        }
        l->set_weight(std::move(wt));
        const Json& meta = h.at("layers").at(l->id());
        QuantizableLinear::State st;
        st.mode = parse_mode(meta.at("mode").get<std::string>());
        if (st.mode == LinearMode::fp) continue;
        st.w_spec = quant_spec_from_json(meta.at("w_spec"), {}, l->id() + ".w_spec");
        if (meta.contains("a_spec")) st.a_spec = quant_spec_from_json(meta.at("a_spec"), {}, l->id() + ".a_spec");
        if (meta.contains("act_params")) st.act_params = group_params_from_json(meta.at("act_params"));
        st.act_keep = meta.at("act_keep").get<std::vector<std::size_t>>();
        st.dynamic_outliers = meta.at("dynamic_outliers").get<std::size_t>();
        st.w_hat = r.f32(l->id() + ".w_hat");
        if (r.has(l->id() + ".divisor")) st.divisor = r.f32_vector(l->id() + ".divisor");
        if (r.has(l->id() + ".codes")) {
          QuantizedTensor q;
          q.rows = st.w_hat.rows();
          q.cols = st.w_hat.cols();
          q.codes = r.u8(l->id() + ".codes");
          q.spec = st.w_spec;
          q.params.layout = layout_from_json(meta.at("layout"));
          for (const auto& g : meta.at("params")) q.params.groups.push_back(group_params_from_json(g));
          st.codes = std::move(q);
        }
        l->load_state(std::move(st));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed model header: " + e.what());
  }
  return m;
}

void export_quantized(const TinyDecoder& model, const std::filesystem::path& path) {
  ContainerWriter w;
  Json layers = Json::object();
  for (const auto* l : model.linears()) {
    Json meta{{"mode", to_string(l->mode())}};
    if (l->mode() == LinearMode::fp || !l->codes()) {
      w.add_f32(l->id() + ".weight", l->weight().rows(), l->weight().cols(), l->weight().data());
      layers[l->id()] = meta;
      continue;
    }
    const QuantizedTensor& q = *l->codes();
    meta["w_spec"] = to_json(q.spec);
    meta["layout"] = layout_json(q.params.layout);
    meta["params"] = params_json(q.params);
    w.add_u8(l->id() + ".codes", q.rows, q.cols, q.codes);
    if (!l->input_divisor().empty()) w.add_f32(l->id() + ".divisor", 1, q.cols, l->input_divisor());
    // Entries kept in full precision are those where W_hat departs from the codes.
    const Matrix deq = dequantize(q);
    std::vector<float> idx, val;
    for (std::size_t i = 0; i < deq.size(); ++i) {
      if (deq.data()[i] != l->weight_hat().data()[i]) {
        idx.push_back(static_cast<float>(i));
        val.push_back(l->weight_hat().data()[i]);
      }
    }
    meta["fp_entries"] = idx.size();
    if (!idx.empty()) {
      w.add_f32(l->id() + ".fp_index", 1, idx.size(), idx);
      w.add_f32(l->id() + ".fp_value", 1, val.size(), val);
    }
    layers[l->id()] = meta;
  }
  Json header{{"format", "tmq"}, {"version", 1}, {"config", to_json(model.config())}, {"layers", layers}};
  w.write(path, kExportMagic, header);
}

std::vector<std::pair<std::string, Matrix>> read_export(const std::filesystem::path& path) {
  ContainerReader r(path, kExportMagic);
  std::vector<std::pair<std::string, Matrix>> out;
  try {
    for (const auto& [id, meta] : r.header().at("layers").items()) {
      if (!meta.contains("w_spec")) {
        out.emplace_back(id, r.f32(id + ".weight"));
        continue;
      }
      QuantizedTensor q;
      q.spec = quant_spec_from_json(meta.at("w_spec"), {}, id);
      q.params.layout = layout_from_json(meta.at("layout"));
      q.rows = q.params.layout.rows;
      q.cols = q.params.layout.cols;
      q.codes = r.u8(id + ".codes");
      for (const auto& g : meta.at("params")) q.params.groups.push_back(group_params_from_json(g));
      Matrix w = dequantize(q);
      if (meta.at("fp_entries").get<std::size_t>() > 0) {
        const auto idx = r.f32_vector(id + ".fp_index");
        const auto val = r.f32_vector(id + ".fp_value");
        for (std::size_t k = 0; k < idx.size(); ++k) w.data()[static_cast<std::size_t>(idx[k])] = val[k];
      }
      out.emplace_back(id, std::move(w));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed export header: " + e.what());
  }
  return out;
}

}  // namespace ptq
