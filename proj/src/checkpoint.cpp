#include "structlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <json.hpp>

namespace structlm {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoint arrays are written in host order");

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'U', 'C', 'T', 'L', 'M'};
constexpr std::size_t kPreamble = sizeof kMagic + 4 + 8;
constexpr std::string_view kRealName = sizeof(real) == sizeof(double) ? "double" : "float";

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view bytes, std::size_t at) {
    T v;
    std::memcpy(&v, bytes.data() + at, sizeof(T));
    return v;
}

json model_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"num_heads", c.num_heads},
                {"hidden_d", c.hidden_d},
                {"ffn_d", c.ffn_d},
                {"vocab_size", c.vocab_size},
                {"max_len", c.max_len},
                {"num_areas", c.num_areas},
                {"num_tag_labels", c.num_tag_labels},
                {"num_doc_classes", c.num_doc_classes},
                {"layout_mode", std::string(to_string(c.layout_mode))},
                {"cpc_head", c.cpc_head},
                {"dropout", static_cast<double>(c.dropout)},
                {"layer_norm_eps", static_cast<double>(c.layer_norm_eps)},
                {"init_std", static_cast<double>(c.init_std)}};
}

ModelConfig model_from(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.hidden_d = j.at("hidden_d").get<std::size_t>();
    c.ffn_d = j.at("ffn_d").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.num_areas = j.at("num_areas").get<std::size_t>();
    c.num_tag_labels = j.at("num_tag_labels").get<std::size_t>();
    c.num_doc_classes = j.at("num_doc_classes").get<std::size_t>();
    c.layout_mode = parse_layout_mode(j.at("layout_mode").get<std::string>());
    c.cpc_head = j.at("cpc_head").get<bool>();
    c.dropout = static_cast<real>(j.at("dropout").get<double>());
    c.layer_norm_eps = static_cast<real>(j.at("layer_norm_eps").get<double>());
    c.init_std = static_cast<real>(j.at("init_std").get<double>());
    return c;
}

json shape_json(const Shape& s) {
    json out = json::array();
    for (auto d : s) out.push_back(d);
    return out;
}

}  // namespace

std::string model_config_json(const ModelConfig& config) { return model_json(config).dump(); }

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    const auto named = ckpt.params.named();
    std::string data;
    json arrays = json::array();
    auto append = [&](const std::string& name, const Shape& shape, std::span<const real> values) {
        arrays.push_back({{"name", name}, {"shape", shape_json(shape)}, {"offset", data.size()}});
        data.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    };
    for (const auto& nt : named) append(nt.name, nt.tensor.shape(), nt.tensor.data());
    json manifest = arrays;

    json optimizer = nullptr;
    if (ckpt.adam) {
        const auto& a = *ckpt.adam;
        if (a.first_moment.size() != named.size() || a.second_moment.size() != named.size()) {
            throw contract_error("checkpoint: optimizer state does not match the parameter list");
        }
        arrays = json::array();
        for (std::size_t i = 0; i < named.size(); ++i) {
            append("m/" + named[i].name, named[i].tensor.shape(), a.first_moment[i]);
            append("v/" + named[i].name, named[i].tensor.shape(), a.second_moment[i]);
        }
        optimizer = json{{"step_count", a.step_count}, {"arrays", arrays}};
    }

    json header{{"kind", ckpt.kind},
                {"real", std::string(kRealName)},
                {"model", model_json(ckpt.model)},
                {"step", ckpt.step},
                {"rng", ckpt.rng_state},
                {"config", ckpt.config},
                {"vocab", ckpt.vocab.tokens()},
                {"arrays", manifest},
                {"optimizer", optimizer},
                {"data_bytes", data.size()}};
    const auto text = header.dump();

    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    out += data;
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes, std::string_view where) {
    const std::string w(where);
    if (bytes.size() < kPreamble) {
        if (bytes.size() >= sizeof kMagic && std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
            throw checkpoint_format_error(w + ": not a checkpoint (bad magic)");
        }
        throw checkpoint_truncated_error(w + ": truncated (" + std::to_string(bytes.size()) + " bytes)");
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw checkpoint_format_error(w + ": not a checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(bytes, sizeof kMagic);
    if (version != kCheckpointVersion) {
        throw checkpoint_version_error(w + ": format version " + std::to_string(version) + ", expected " +
                                       std::to_string(kCheckpointVersion));
    }
    const auto header_len = get<std::uint64_t>(bytes, sizeof kMagic + 4);
    if (header_len > bytes.size() - kPreamble) throw checkpoint_truncated_error(w + ": truncated inside the header");

    json header;
    try {
        header = json::parse(bytes.substr(kPreamble, header_len));
    } catch (const json::exception& e) {
        throw checkpoint_format_error(w + ": unreadable header: " + e.what());
    }
    const std::string_view data = bytes.substr(kPreamble + header_len);

    Checkpoint ckpt;
    try {
        if (header.at("real").get<std::string>() != kRealName) {
            throw checkpoint_format_error(w + ": arrays are " + header.at("real").get<std::string>() +
                                          " but this build computes in " + std::string(kRealName));
        }
        const auto data_bytes = header.at("data_bytes").get<std::size_t>();
        if (data.size() < data_bytes) {
            throw checkpoint_truncated_error(w + ": truncated (" + std::to_string(data.size()) + " of " +
                                             std::to_string(data_bytes) + " data bytes)");
        }
        if (data.size() > data_bytes) throw checkpoint_format_error(w + ": trailing bytes after the arrays");

        ckpt.kind = header.at("kind").get<std::string>();
        ckpt.model = model_from(header.at("model"));
        ckpt.step = header.at("step").get<std::uint64_t>();
        ckpt.rng_state = header.at("rng").get<std::string>();
        ckpt.config = header.at("config").get<std::string>();
        ckpt.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
        try {
            ckpt.model.validate();
        } catch (const config_error& e) {
            throw checkpoint_shape_error(w + ": " + e.what());
        }
        if (ckpt.vocab.size() != ckpt.model.vocab_size) {
            throw checkpoint_shape_error(w + ": vocabulary has " + std::to_string(ckpt.vocab.size()) +
                                         " tokens but the model expects " + std::to_string(ckpt.model.vocab_size));
        }

        ckpt.params = Parameters::init(ckpt.model, 0);
        const auto named = ckpt.params.named();
        auto read_array = [&](const json& entry, const std::string& name, const Shape& shape, std::span<real> dst) {
            if (entry.at("name").get<std::string>() != name) {
                throw checkpoint_shape_error(w + ": expected array '" + name + "', found '" +
                                             entry.at("name").get<std::string>() + "'");
            }
            if (entry.at("shape").get<Shape>() != shape) {
                throw checkpoint_shape_error(w + ": array '" + name + "' has shape " + entry.at("shape").dump() +
                                             ", the model config implies " + shape_json(shape).dump());
            }
            const auto offset = entry.at("offset").get<std::size_t>();
            if (offset > data.size() || dst.size_bytes() > data.size() - offset) {
                throw checkpoint_truncated_error(w + ": array '" + name + "' extends past the end of the file");
            }
            std::memcpy(dst.data(), data.data() + offset, dst.size_bytes());
        };

        const auto& arrays = header.at("arrays");
        if (arrays.size() != named.size()) {
            throw checkpoint_shape_error(w + ": manifest lists " + std::to_string(arrays.size()) +
                                         " arrays, the model config implies " + std::to_string(named.size()));
        }
        for (std::size_t i = 0; i < named.size(); ++i) {
            Tensor t = named[i].tensor;
            read_array(arrays[i], named[i].name, t.shape(), t.data());
        }

        const auto& opt = header.at("optimizer");
        if (!opt.is_null()) {
            const auto& moments = opt.at("arrays");
            if (moments.size() != 2 * named.size()) {
                throw checkpoint_shape_error(w + ": optimizer manifest does not match the parameter list");
            }
            AdamState a;
            a.step_count = opt.at("step_count").get<std::uint64_t>();
            for (std::size_t i = 0; i < named.size(); ++i) {
                const auto& shape = named[i].tensor.shape();
                a.first_moment.emplace_back(named[i].tensor.size());
                a.second_moment.emplace_back(named[i].tensor.size());
                read_array(moments[2 * i], "m/" + named[i].name, shape, a.first_moment.back());
                read_array(moments[2 * i + 1], "v/" + named[i].name, shape, a.second_moment.back());
            }
            ckpt.adam = std::move(a);
        }
    } catch (const json::exception& e) {
        throw checkpoint_format_error(w + ": malformed header: " + e.what());
    } catch (const std::invalid_argument& e) {
        throw checkpoint_format_error(w + ": malformed header: " + e.what());
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path), path); }

}  // namespace structlm
