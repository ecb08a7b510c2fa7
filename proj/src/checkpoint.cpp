#include "crdt/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace crdt {

using nlohmann::json;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json j;
    j["format"] = "crdt-checkpoint";
    j["version"] = 1;
    j["meta"] = json::parse(ckpt.meta_json);
    json tensors = json::object();
    for (const auto& [name, t] : ckpt.tensors) {
        json rec;
        rec["shape"] = t.shape;
        rec["data"] = t.data;
        rec["requires_grad"] = t.requires_grad;
        tensors[name] = std::move(rec);
    }
    j["tensors"] = std::move(tensors);
    if (ckpt.opt_step_count) {
        json opt;
        opt["step_count"] = *ckpt.opt_step_count;
        json moments = json::object();
        for (const auto& [name, mom] : ckpt.opt_moments) {
            moments[name] = {{"m", mom.m}, {"v", mom.v}};
        }
        opt["moments"] = std::move(moments);
        j["optimizer"] = std::move(opt);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out << j.dump();
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    json j = json::parse(in);
    if (j.value("format", "") != "crdt-checkpoint") {
        throw std::runtime_error("checkpoint: unrecognized format in " + path);
    }
    if (j.value("version", 0) != 1) {
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    }
    Checkpoint ckpt;
    ckpt.meta_json = j.value("meta", json::object()).dump();
    for (const auto& [name, rec] : j.at("tensors").items()) {
        Tensor t;
        t.shape = rec.at("shape").get<std::vector<std::size_t>>();
        t.data = rec.at("data").get<std::vector<double>>();
        t.requires_grad = rec.value("requires_grad", false);
        if (t.data.size() != shape_numel(t.shape)) {
            throw std::runtime_error("checkpoint: data/shape mismatch for tensor " + name);
        }
        ckpt.tensors[name] = std::move(t);
    }
    if (j.contains("optimizer")) {
        const json& opt = j.at("optimizer");
        ckpt.opt_step_count = opt.at("step_count").get<std::uint64_t>();
        for (const auto& [name, rec] : opt.at("moments").items()) {
            Adam::Moments mom;
            mom.m = rec.at("m").get<std::vector<double>>();
            mom.v = rec.at("v").get<std::vector<double>>();
            ckpt.opt_moments[name] = std::move(mom);
        }
    }
    return ckpt;
}

}  // namespace crdt
