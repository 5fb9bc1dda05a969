#pragma once

#include <cstring>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "eena/netgraph.hpp"

namespace eena {

// Network document: "EENA" magic, u32 format version, u64 JSON header
// length, JSON header, then a raw little-endian weight blob addressed by
// per-array offsets recorded in the header.

inline constexpr std::uint32_t kNetworkFormatVersion = 1;

namespace detail {

template <class Real>
const char* dtype_name() {
  if constexpr (std::is_same_v<Real, float>) return "f32";
  else if constexpr (std::is_same_v<Real, double>) return "f64";
  else static_assert(sizeof(Real) == 0, "unsupported scalar type");
}

template <class T>
void append_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class Real>
void append_array(std::string& blob, nlohmann::json& offsets, const char* name,
                  const std::vector<Real>& v) {
  offsets[name] = {{"offset", blob.size()}, {"count", v.size()}};
  blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(Real));
}

template <class Real>
std::vector<Real> read_array(const std::string& blob, const nlohmann::json& off) {
  const std::size_t offset = off.at("offset").get<std::size_t>();
  const std::size_t count = off.at("count").get<std::size_t>();
  if (offset + count * sizeof(Real) > blob.size())
    throw data_error("network document truncated: weight blob too short");
  std::vector<Real> v(count);
  std::memcpy(v.data(), blob.data() + offset, count * sizeof(Real));
  return v;
}

}  // namespace detail

template <class Real>
std::string encode_network(const NetworkGraph<Real>& g) {
  nlohmann::json header;
  header["format_version"] = kNetworkFormatVersion;
  header["dtype"] = detail::dtype_name<Real>();
  header["next_id"] = g.next_id;
  header["input_id"] = g.input_id;
  header["head_id"] = g.head_id;
  header["in_channels"] = g.in_channels;
  header["blocks"] = g.blocks;

  std::string blob;
  nlohmann::json nodes = nlohmann::json::array();
  nlohmann::json edges = nlohmann::json::array();
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [id, n] : g.nodes) {
    nlohmann::json jn;
    jn["id"] = id;
    jn["kind"] = layer_kind_name(n.kind);
    jn["inputs"] = n.inputs;
    for (int in : n.inputs) edges.push_back({in, id});
    if (n.kind == LayerKind::ConvBlock) {
      jn["conv"] = {{"kh", n.conv.kh}, {"kw", n.conv.kw},
                    {"cin", n.conv.cin}, {"cout", n.conv.cout}};
      jn["bn_eps"] = static_cast<double>(n.bn.eps);
      nlohmann::json off;
      detail::append_array(blob, off, "conv_w", n.conv.w);
      detail::append_array(blob, off, "bn_gamma", n.bn.gamma);
      detail::append_array(blob, off, "bn_beta", n.bn.beta);
      detail::append_array(blob, off, "bn_running_mean", n.bn.running_mean);
      detail::append_array(blob, off, "bn_running_var", n.bn.running_var);
      jn["weights"] = off;
      shapes[std::to_string(id)] = {n.conv.kh, n.conv.kw, n.conv.cin, n.conv.cout};
    } else if (n.kind == LayerKind::SoftmaxHead) {
      jn["dense"] = {{"cin", n.head.cin}, {"cout", n.head.cout}};
      nlohmann::json off;
      detail::append_array(blob, off, "head_w", n.head.w);
      detail::append_array(blob, off, "head_b", n.head.b);
      jn["weights"] = off;
      shapes[std::to_string(id)] = {n.head.cin, n.head.cout};
    }
    nodes.push_back(std::move(jn));
  }
  header["nodes"] = std::move(nodes);
  header["edges"] = std::move(edges);
  header["shapes"] = std::move(shapes);

  const std::string hs = header.dump();
  std::string out = "EENA";
  detail::append_le(out, kNetworkFormatVersion);
  detail::append_le(out, static_cast<std::uint64_t>(hs.size()));
  out += hs;
  out += blob;
  return out;
}

template <class Real>
NetworkGraph<Real> decode_network(const std::string& doc) {
  if (doc.size() < 16 || doc.compare(0, 4, "EENA") != 0)
    throw data_error("network document: bad magic");
  std::uint32_t version;
  std::uint64_t hlen;
  std::memcpy(&version, doc.data() + 4, 4);
  std::memcpy(&hlen, doc.data() + 8, 8);
  if (version != kNetworkFormatVersion)
    throw data_error("network document: unsupported format version " +
                     std::to_string(version));
  if (16 + hlen > doc.size())
    throw data_error("network document truncated: header too short");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(doc.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("network document: malformed header: ") + e.what());
  }
  if (header.at("dtype").get<std::string>() != detail::dtype_name<Real>())
    throw data_error("network document: dtype " +
                     header.at("dtype").get<std::string>() +
                     " does not match engine precision " +
                     detail::dtype_name<Real>());
  const std::string blob = doc.substr(16 + hlen);

  NetworkGraph<Real> g;
  try {
    g.next_id = header.at("next_id").get<int>();
    g.input_id = header.at("input_id").get<int>();
    g.head_id = header.at("head_id").get<int>();
    g.in_channels = header.at("in_channels").get<int>();
    g.blocks = header.at("blocks").get<std::vector<std::vector<int>>>();
    for (const auto& jn : header.at("nodes")) {
      LayerNode<Real> n;
      n.id = jn.at("id").get<int>();
      n.kind = layer_kind_from_name(jn.at("kind").get<std::string>());
      n.inputs = jn.at("inputs").get<std::vector<int>>();
      if (n.kind == LayerKind::ConvBlock) {
        const auto& jc = jn.at("conv");
        n.conv = ConvParams<Real>(jc.at("kh").get<int>(), jc.at("kw").get<int>(),
                                  jc.at("cin").get<int>(), jc.at("cout").get<int>());
        n.bn = BnParams<Real>(n.conv.cout,
                              static_cast<Real>(jn.at("bn_eps").get<double>()));
        const auto& off = jn.at("weights");
        n.conv.w = detail::read_array<Real>(blob, off.at("conv_w"));
        n.bn.gamma = detail::read_array<Real>(blob, off.at("bn_gamma"));
        n.bn.beta = detail::read_array<Real>(blob, off.at("bn_beta"));
        n.bn.running_mean = detail::read_array<Real>(blob, off.at("bn_running_mean"));
        n.bn.running_var = detail::read_array<Real>(blob, off.at("bn_running_var"));
        if (n.conv.w.size() != static_cast<std::size_t>(n.conv.kh) * n.conv.kw *
                                   n.conv.cin * n.conv.cout)
          throw data_error("network document: conv weight count mismatch");
      } else if (n.kind == LayerKind::SoftmaxHead) {
        const auto& jd = jn.at("dense");
        n.head = DenseParams<Real>(jd.at("cin").get<int>(), jd.at("cout").get<int>());
        const auto& off = jn.at("weights");
        n.head.w = detail::read_array<Real>(blob, off.at("head_w"));
        n.head.b = detail::read_array<Real>(blob, off.at("head_b"));
      }
      const int id = n.id;
      g.nodes.emplace(id, std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("network document: malformed header: ") + e.what());
  }
  if (g.nodes.find(g.input_id) == g.nodes.end() ||
      g.nodes.find(g.head_id) == g.nodes.end())
    throw data_error("network document: missing input or head node");
  return g;
}

}  // namespace eena
