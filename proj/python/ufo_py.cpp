// Python face of the core: construct managed objects from the built-in
// back-ends, read/write them, and inspect instrumentation. Bodies are
// exposed as buffers, so numpy works on them and faults resolve lazily
// underneath (the service thread never takes the GIL).
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ufo/backends.hpp"
#include "ufo/core.hpp"

#include <cstring>
#include <memory>
#include <optional>
#include <string>

namespace py = pybind11;
using namespace ufo;

namespace {

// lazily scanned CSV: hands out one managed column at a time
struct CsvTable {
    Core* core;
    std::shared_ptr<CsvIndex> index;

    std::vector<std::pair<std::string, std::string>> columns() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const CsvColumn& c : index->columns())
            out.emplace_back(c.name, c.kind == CsvKind::int64 ? "int64" : "float64");
        return out;
    }
    std::uint64_t rows() const { return index->row_count(); }
    UfoHandle column(std::size_t ix, bool read_only) const {
        return core->create(csv_column_config(index, ix, read_only));
    }
};

std::int64_t sign_extend(const unsigned char* p, std::size_t width) {
    std::uint64_t raw = 0;
    std::memcpy(&raw, p, width);
    if (width == 8) return static_cast<std::int64_t>(raw);
    const std::uint64_t sign_bit = 1ull << (width * 8 - 1);
    if (raw & sign_bit) raw |= ~((sign_bit << 1) - 1);
    return static_cast<std::int64_t>(raw);
}

std::int64_t read_int(Core& core, const UfoHandle& h, std::uint64_t ix) {
    const std::size_t e = h.element_size();
    if (e > 8) throw ConfigError("read_int supports element sizes up to 8");
    unsigned char buf[8] = {};
    {
        py::gil_scoped_release unlock;
        core.read(h, ix, buf);
    }
    return sign_extend(buf, e);
}

bool write_int(Core& core, const UfoHandle& h, std::uint64_t ix, std::int64_t value) {
    const std::size_t e = h.element_size();
    if (e > 8) throw ConfigError("write_int supports element sizes up to 8");
    py::gil_scoped_release unlock;
    return core.write(h, ix, &value); // little-endian truncation
}

py::dict stats_dict(const CoreStats& st) {
    py::dict d;
    d["resident_bytes"] = st.resident_bytes;
    d["peak_resident_bytes"] = st.peak_resident_bytes;
    d["collections"] = st.collections;
    d["evicted_chunks"] = st.evicted_chunks;
    d["max_collection_end_bytes"] = st.max_collection_end_bytes;
    d["faults"] = st.faults;
    d["populate_calls"] = st.populate_calls;
    d["hash_calls"] = st.hash_calls;
    d["write_backs"] = st.write_backs;
    d["cache_loads"] = st.cache_loads;
    d["live_objects"] = st.live_objects;
    return d;
}

const char* status_name(ObjectStatus s) {
    switch (s) {
    case ObjectStatus::live: return "live";
    case ObjectStatus::poisoned: return "poisoned";
    default: return "freed";
    }
}

} // namespace

PYBIND11_MODULE(ufo_py, m) {
    m.doc() = "lazily materialized larger-than-memory objects";

    auto base = py::register_exception<UfoError>(m, "UfoError");
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<StateError>(m, "StateError", base);
    py::register_exception<RangeError>(m, "RangeError", base);
    py::register_exception<PoisonedError>(m, "PoisonedError", base);
    py::register_exception<SystemError>(m, "SystemFailure", base);

    py::class_<UfoHandle>(m, "Ufo")
        .def_property_readonly("element_count", &UfoHandle::element_count)
        .def_property_readonly("element_size", &UfoHandle::element_size)
        .def_property_readonly("header_size", &UfoHandle::header_size)
        .def_property_readonly("body_bytes", &UfoHandle::body_bytes)
        .def_property_readonly("read_only", &UfoHandle::read_only)
        .def_property_readonly("status", [](const UfoHandle& h) { return status_name(h.status()); })
        .def_property_readonly("poison_reason", &UfoHandle::poison_reason)
        .def("valid", &UfoHandle::valid)
        .def("__len__", &UfoHandle::element_count)
        .def("__repr__", [](const UfoHandle& h) {
            return "<Ufo id=" + std::to_string(h.id()) + " n=" + std::to_string(h.element_count()) +
                   " elem=" + std::to_string(h.element_size()) + " " + status_name(h.status()) + ">";
        });

    py::class_<CsvTable>(m, "CsvTable")
        .def_property_readonly("rows", &CsvTable::rows)
        .def("columns", &CsvTable::columns)
        .def("column", &CsvTable::column, py::arg("index"), py::arg("read_only") = false)
        .def_property_readonly("seek_count", [](const CsvTable& t) { return t.index->seek_count(); });

    py::class_<Core>(m, "Core")
        .def(py::init([](std::optional<std::uint64_t> high_water, std::optional<std::uint64_t> low_water,
                         std::optional<std::uint64_t> chunk_size, std::optional<std::string> backend,
                         std::optional<std::string> temp_dir) {
                 CoreParams p;
                 p.high_water = high_water;
                 p.low_water = low_water;
                 p.chunk_size = chunk_size;
                 p.backend = std::move(backend);
                 p.temp_dir = std::move(temp_dir);
                 py::gil_scoped_release unlock;
                 return std::make_unique<Core>(p);
             }),
             py::arg("high_water") = py::none(), py::arg("low_water") = py::none(),
             py::arg("chunk_size") = py::none(), py::arg("backend") = py::none(),
             py::arg("temp_dir") = py::none())
        .def("seq",
             [](Core& c, std::int64_t from, std::int64_t to, std::int64_t by,
                std::size_t element_size, bool read_only) {
                 auto cfg = seq_config({from, to, by}, element_size);
                 cfg.read_only = read_only;
                 py::gil_scoped_release unlock;
                 return c.create(cfg);
             },
             py::arg("from_"), py::arg("to"), py::arg("by") = 1, py::arg("element_size") = 8,
             py::arg("read_only") = false)
        .def("from_file",
             [](Core& c, const std::string& path, std::size_t element_size, std::uint64_t count,
                std::uint64_t offset, bool read_only) {
                 py::gil_scoped_release unlock;
                 return c.create(file_config({path, element_size, count, offset}, read_only));
             },
             py::arg("path"), py::arg("element_size"), py::arg("count") = 0,
             py::arg("offset") = 0, py::arg("read_only") = false)
        .def("fill",
             [](Core& c, const py::bytes& value, std::uint64_t count) {
                 std::string v = value;
                 FillSpec spec;
                 spec.value.resize(v.size());
                 std::memcpy(spec.value.data(), v.data(), v.size());
                 spec.element_count = count;
                 py::gil_scoped_release unlock;
                 return c.create(fill_config(spec));
             },
             py::arg("value"), py::arg("count"))
        .def("csv",
             [](Core& c, const std::string& path) {
                 py::gil_scoped_release unlock;
                 return CsvTable{&c, CsvIndex::scan(path)};
             },
             py::arg("path"), py::keep_alive<0, 1>())
        .def("view",
             [](Core&, const UfoHandle& h) {
                 if (!h.valid()) throw StateError("view of an invalid handle");
                 return py::memoryview::from_memory(h.data(), static_cast<py::ssize_t>(h.body_bytes()),
                                                    h.read_only());
             },
             py::arg("handle"), "zero-copy buffer over the body; faults resolve lazily")
        .def("read_int", &read_int, py::arg("handle"), py::arg("index"))
        .def("write_int", &write_int, py::arg("handle"), py::arg("index"), py::arg("value"))
        .def("read_bytes",
             [](Core& c, const UfoHandle& h, std::uint64_t lo, std::uint64_t hi) {
                 const std::size_t e = h.element_size();
                 std::string buf((hi - lo) * e, '\0');
                 {
                     py::gil_scoped_release unlock;
                     c.read_range(h, lo, hi, buf.data());
                 }
                 return py::bytes(buf);
             },
             py::arg("handle"), py::arg("lo"), py::arg("hi"))
        .def("free",
             [](Core& c, UfoHandle& h) {
                 py::gil_scoped_release unlock;
                 c.free(h);
             },
             py::arg("handle"))
        .def("evict_all",
             [](Core& c) {
                 py::gil_scoped_release unlock;
                 c.evict_all();
             })
        .def("stats", [](const Core& c) { return stats_dict(c.stats()); })
        .def("object_stats",
             [](const Core& c, const UfoHandle& h) {
                 const auto st = c.object_stats(h);
                 py::dict d;
                 d["status"] = status_name(st.status);
                 d["poison_reason"] = st.poison_reason;
                 d["faults"] = st.faults;
                 d["populate_calls"] = st.populate_calls;
                 d["hash_calls"] = st.hash_calls;
                 d["write_backs"] = st.write_backs;
                 d["cache_loads"] = st.cache_loads;
                 d["evictions"] = st.evictions;
                 d["materializations"] = st.materializations;
                 d["resident_chunks"] = st.resident_chunks;
                 d["cache_file_bytes"] = st.cache_file_bytes;
                 return d;
             },
             py::arg("handle"))
        .def_property_readonly("chunk_size", &Core::chunk_size)
        .def_property_readonly("high_water", &Core::high_water)
        .def_property_readonly("low_water", &Core::low_water)
        .def("shutdown",
             [](Core& c) {
                 py::gil_scoped_release unlock;
                 c.shutdown();
             })
        .def("__enter__", [](Core& c) -> Core& { return c; })
        .def("__exit__", [](Core& c, const py::object&, const py::object&, const py::object&) {
            py::gil_scoped_release unlock;
            c.shutdown();
            return false;
        });
}
