#include "koala/params.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace koala {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor& ParamStore::add(const std::string& name, Tensor value, bool frozen, bool decay) {
    if (has(name)) throw ContractError("param store: duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.value = std::move(value);
    e.frozen = frozen;
    e.decay = decay;
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back().value;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("param store: unknown parameter " + name);
    return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("param store: unknown parameter " + name);
    return entries_[it->second];
}

void ParamStore::freeze_all() {
    for (Entry& e : entries_) e.frozen = true;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const Entry& e : entries_) out.push_back(e.name);
    return out;
}

std::vector<std::string> ParamStore::learnable_names() const {
    std::vector<std::string> out;
    for (const Entry& e : entries_)
        if (!e.frozen) out.push_back(e.name);
    return out;
}

std::vector<std::string> ParamStore::frozen_names() const {
    std::vector<std::string> out;
    for (const Entry& e : entries_)
        if (e.frozen) out.push_back(e.name);
    return out;
}

std::size_t ParamStore::learnable_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
        if (!e.frozen) ++n;
    return n;
}

std::map<std::string, std::string> ParamStore::checksums(bool frozen_only) const {
    std::map<std::string, std::string> out;
    for (const Entry& e : entries_) {
        if (frozen_only && !e.frozen) continue;
        out[e.name] = checksum_hex(e.value);
    }
    return out;
}

void ParamStore::save(const std::string& dir) const {
    fs::create_directories(fs::path(dir) / "params");
    json manifest;
    manifest["version"] = 1;
    json plist = json::array();
    for (const Entry& e : entries_) {
        const std::string file = "params/" + e.name + ".koat";
        save_koat(e.value, (fs::path(dir) / file).string());
        json p;
        p["name"] = e.name;
        p["file"] = file;
        p["frozen"] = e.frozen;
        p["decay"] = e.decay;
        p["dims"] = e.value.dims;
        p["checksum"] = checksum_hex(e.value);
        plist.push_back(std::move(p));
    }
    manifest["params"] = std::move(plist);
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw InputError("checkpoint: cannot write manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

ParamStore ParamStore::load(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw InputError("checkpoint: missing manifest in " + dir);
    json manifest;
    f >> manifest;
    if (manifest.value("version", 0) != 1) throw InputError("checkpoint: unsupported manifest version");
    ParamStore store;
    for (const json& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        Tensor t = load_koat((fs::path(dir) / p.at("file").get<std::string>()).string());
        const std::string want = p.at("checksum").get<std::string>();
        if (checksum_hex(t) != want)
            throw InputError("checkpoint: checksum mismatch for " + name);
        store.add(name, std::move(t), p.at("frozen").get<bool>(), p.value("decay", true));
    }
    return store;
}

NodeId ParamCtx::operator[](const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const ParamStore::Entry& e = store_.entry(name);
    const NodeId id = tape_.leaf(e.value, /*retain_grad=*/!e.frozen);
    bound_[name] = id;
    return id;
}

std::map<std::string, Tensor> ParamCtx::grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : bound_) {
        if (tape_.has_grad(id)) out[name] = tape_.grad(id);
    }
    return out;
}

} // namespace koala
