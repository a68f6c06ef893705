#include "dereflect/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace dereflect::net {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'F', 'L', 'C', 'K', 'P', 'T'};

struct Raw {
    nlohmann::json header;
    std::vector<float> data;
};

Raw read_raw(const std::filesystem::path& path, bool with_data) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ValidationError(path.string() + " is not a checkpoint");
    if (version != kCheckpointVersion) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    }
    std::string text(header_len, '\0');
    in.read(text.data(), std::streamsize(header_len));
    if (!in) throw ValidationError("truncated checkpoint header in " + path.string());
    Raw raw;
    raw.header = nlohmann::json::parse(text);
    if (with_data) {
        const std::size_t count = raw.header.at("float_count").get<std::size_t>();
        raw.data.resize(count);
        in.read(reinterpret_cast<char*>(raw.data.data()), std::streamsize(count * sizeof(float)));
        if (!in) throw ValidationError("truncated checkpoint data in " + path.string());
    }
    return raw;
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    nlohmann::json parts = nlohmann::json::object();
    std::vector<const Param*> order;
    std::size_t offset = 0;
    for (Partition p : kAllPartitions) {
        nlohmann::json list = nlohmann::json::array();
        for (const Param* q : model.partition(p)) {
            list.push_back({{"name", q->name}, {"shape", q->shape}, {"offset", offset}, {"count", q->size()}});
            offset += q->size();
            order.push_back(q);
        }
        parts[partition_name(p)] = list;
    }
    const nlohmann::json header = {{"version", kCheckpointVersion},
                                   {"config", model.config().to_json()},
                                   {"schedule", model.schedule().to_json()},
                                   {"noise_seed", model.config().noise_seed},
                                   {"latent_scale", model.latent_scale},
                                   {"stages_completed", model.stages_completed},
                                   {"partitions", parts},
                                   {"float_count", offset}};
    const std::string text = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const Param* q : order) {
        out.write(reinterpret_cast<const char*>(q->value.data()), std::streamsize(q->size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header; }

Model load_checkpoint(const std::filesystem::path& path) {
    const Raw raw = read_raw(path, true);
    const nlohmann::json& h = raw.header;
    Model model(ModelConfig::from_json(h.at("config")));
    model.latent_scale = h.at("latent_scale").get<float>();
    model.stages_completed = h.at("stages_completed").get<std::vector<std::string>>();
    for (Partition p : kAllPartitions) {
        const auto& list = h.at("partitions").at(partition_name(p));
        std::map<std::string, const nlohmann::json*> by_name;
        for (const auto& e : list) by_name[e.at("name").get<std::string>()] = &e;
        for (Param* q : model.partition(p)) {
            auto it = by_name.find(q->name);
            if (it == by_name.end()) throw ValidationError("checkpoint lacks parameter " + q->name);
            const nlohmann::json& e = *it->second;
            if (e.at("shape").get<std::vector<int>>() != q->shape) {
                throw DimensionError("checkpoint shape mismatch for " + q->name);
            }
            const auto off = e.at("offset").get<std::size_t>();
            const auto count = e.at("count").get<std::size_t>();
            if (count != q->size() || off + count > raw.data.size()) {
                throw ValidationError("corrupt parameter table entry " + q->name);
            }
            std::copy_n(raw.data.begin() + std::ptrdiff_t(off), count, q->value.begin());
        }
    }
    return model;
}

} // namespace dereflect::net
