#include "voxelsim/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "voxelsim/heads.hpp"
#include "voxelsim/unet.hpp"

using json = nlohmann::json;

namespace voxelsim {
namespace {

constexpr char kMagic[8] = {'V', 'S', 'C', 'K', 'P', 'T', '1', '\n'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["version"] = 1;
    header["epoch"] = ckpt.epoch;
    header["best_val_dsc"] = ckpt.best_val_dsc;
    header["heads_included"] = ckpt.heads_included;
    header["train"] = train_config_to_json(ckpt.train);
    json tensors = json::array();
    uint64_t offset = 0;
    for (const auto& [name, data] : ckpt.tensors) {
        tensors.push_back(
            {{"name", name}, {"count", data.size()}, {"offset", offset}, {"dtype", "f64"}});
        offset += data.size() * sizeof(double);
    }
    header["tensors"] = std::move(tensors);
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [name, data] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(data.data()),
                  std::streamsize(data.size() * sizeof(double)));
    if (!out) throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a voxelsim checkpoint: " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), std::streamsize(hlen));
    if (size_t(in.gcount()) != hlen) throw DataError("truncated checkpoint header: " + path);

    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint header: " + std::string(e.what()));
    }
    Checkpoint ckpt;
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.best_val_dsc = header.value("best_val_dsc", 0.0);
    ckpt.heads_included = header.at("heads_included").get<bool>();
    ckpt.train = train_config_from_json(header.at("train"));

    const auto payload_start = in.tellg();
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const uint64_t count = t.at("count").get<uint64_t>();
        const uint64_t offset = t.at("offset").get<uint64_t>();
        if (t.value("dtype", "f64") != std::string("f64"))
            throw DataError("unsupported tensor dtype in checkpoint: " + path);
        std::vector<double> data(count);
        in.seekg(payload_start + std::streamoff(offset));
        in.read(reinterpret_cast<char*>(data.data()), std::streamsize(count * sizeof(double)));
        if (size_t(in.gcount()) != count * sizeof(double))
            throw DataError("truncated tensor '" + name + "' in checkpoint: " + path);
        ckpt.tensors.emplace(name, std::move(data));
    }
    return ckpt;
}

Checkpoint make_checkpoint(const TrainConfig& cfg, UNet3D& model, VoxelHeads* heads,
                           const std::map<std::string, std::vector<double>>& opt_state, int epoch,
                           double best_val_dsc) {
    Checkpoint ckpt;
    ckpt.train = cfg;
    ckpt.epoch = epoch;
    ckpt.best_val_dsc = best_val_dsc;
    ckpt.heads_included = heads != nullptr;
    for (const auto& p : model.params()) ckpt.tensors[p.name] = *p.value;
    if (heads)
        for (const auto& p : heads->params()) ckpt.tensors[p.name] = *p.value;
    for (const auto& [name, data] : opt_state) ckpt.tensors["opt." + name] = data;
    return ckpt;
}

namespace {

void load_params(std::vector<ParamRef> params, const Checkpoint& ckpt) {
    for (auto& p : params) {
        auto it = ckpt.tensors.find(p.name);
        if (it == ckpt.tensors.end())
            throw DataError("checkpoint is missing tensor '" + p.name + "'");
        if (it->second.size() != p.value->size())
            throw DataError("checkpoint tensor '" + p.name + "' has wrong size");
        *p.value = it->second;
    }
}

}  // namespace

UNet3D build_unet(const Checkpoint& ckpt) {
    Rng rng(0);  // initialization is overwritten by the stored tensors
    UNet3D model(ckpt.train.unet, rng);
    load_params(model.params(), ckpt);
    return model;
}

VoxelHeads build_heads(const Checkpoint& ckpt, const UNet3D& model) {
    if (!ckpt.heads_included)
        throw DataError("inference-only checkpoint: head parameters were stripped");
    Rng rng(0);
    VoxelHeads heads(ckpt.train.head, model.feature_layer_dims(ckpt.train.n_feature_layers), rng);
    load_params(heads.params(), ckpt);
    return heads;
}

void strip_heads(const std::string& in_path, const std::string& out_path) {
    Checkpoint ckpt = load_checkpoint(in_path);
    for (auto it = ckpt.tensors.begin(); it != ckpt.tensors.end();) {
        if (it->first.rfind("heads.", 0) == 0 || it->first.rfind("opt.", 0) == 0)
            it = ckpt.tensors.erase(it);
        else
            ++it;
    }
    ckpt.heads_included = false;
    save_checkpoint(out_path, ckpt);
}

}  // namespace voxelsim
