#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "koala/tape.hpp"
#include "koala/tensor.hpp"

namespace koala {

// Named model parameters partitioned into frozen and learnable sets.
// Insertion order is stable and defines checkpoint layout.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool frozen = false;
        bool decay = true; // weight-decay eligible
    };

    Tensor& add(const std::string& name, Tensor value, bool frozen, bool decay = true);
    bool has(const std::string& name) const;
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;
    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }

    void set_frozen(const std::string& name, bool frozen) { entry(name).frozen = frozen; }
    void freeze_all();

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<std::string> names() const;
    std::vector<std::string> learnable_names() const;
    std::vector<std::string> frozen_names() const;
    std::size_t learnable_count() const;

    std::map<std::string, std::string> checksums(bool frozen_only = false) const;

    // Checkpoint layout: <dir>/manifest.json + <dir>/params/<name>.koat
    void save(const std::string& dir) const;
    static ParamStore load(const std::string& dir);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds store parameters onto a tape on demand. Learnable parameters become
// grad-retaining leaves; frozen ones enter as constants so no gradient is
// ever produced for them.
class ParamCtx {
public:
    ParamCtx(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}

    NodeId operator[](const std::string& name);

    // name -> gradient for every learnable parameter that received one.
    std::map<std::string, Tensor> grads() const;

private:
    Tape& tape_;
    const ParamStore& store_;
    std::map<std::string, NodeId> bound_;
};

} // namespace koala
