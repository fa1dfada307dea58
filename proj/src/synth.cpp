// SPDX-License-Identifier: Apache-2.0
#include "stip/synth.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stip/common.hpp"
#include "stip/rng.hpp"

namespace stip::harness {

namespace {

// Identifier pools shared by both labels so that nothing except the trigger
// pattern separates the classes.
const char* kContractNames[] = {"Vault", "Token", "Auction", "Wallet", "Market", "Escrow",
                                "Registry", "Lottery", "Crowdsale", "Bank"};
const char* kVarNames[] = {"amount", "balance", "total", "shares", "payout", "stake", "supply",
                           "funds", "quota", "reserve"};
const char* kFuncNames[] = {"redeem", "claim", "settle", "release", "process", "update",
                            "collect", "assign", "rotate", "refresh"};

struct Ctx {
    Rng* rng;
    std::string contract;
    std::string var_a, var_b, func_a, func_b;
};

std::string pick(Rng& rng, const char* const* pool, std::size_t n) {
    return pool[rng.uniform_index(n)];
}

std::string num(Rng& rng) { return std::to_string(1 + rng.uniform_index(999)); }

// Filler functions drawn from a trigger-free pool.
std::string filler_function(Ctx& c) {
    std::ostringstream os;
    switch (c.rng->uniform_index(4)) {
        case 0:
            os << "    function " << c.func_b << "(uint256 " << c.var_a << ") public view returns (uint256) {\n"
               << "        return ledger[msg.sender];\n"
               << "    }\n";
            break;
        case 1:
            os << "    function " << c.func_b << "() public {\n"
               << "        require(ledger[msg.sender] >= " << num(*c.rng) << ");\n"
               << "        emit Updated(msg.sender);\n"
               << "    }\n";
            break;
        case 2:
            os << "    modifier onlyOwner() {\n"
               << "        require(msg.sender == owner);\n"
               << "        _;\n"
               << "    }\n";
            break;
        default:
            os << "    function " << c.func_b << "(uint256 " << c.var_b << ") public onlyOwner {\n"
               << "        ledger[msg.sender] = SafeMath.mul(" << c.var_b << ", " << num(*c.rng) << ");\n"
               << "    }\n";
            break;
    }
    return os.str();
}

// Class trigger bodies. Clean variants express the same intent without the
// trigger tokens.
std::string payload_function(Ctx& c, const std::string& cls, bool vulnerable) {
    std::ostringstream os;
    os << "    function " << c.func_a << "(uint256 " << c.var_a << ") public {\n";
    if (cls == "reentrancy") {
        if (vulnerable) {
            os << "        require(ledger[msg.sender] >= " << c.var_a << ");\n"
               << "        msg.sender.call.value(" << c.var_a << ")(\"\");\n"
               << "        ledger[msg.sender] = SafeMath.sub(ledger[msg.sender], " << c.var_a << ");\n";
        } else {
            os << "        require(ledger[msg.sender] >= " << c.var_a << ");\n"
               << "        ledger[msg.sender] = SafeMath.sub(ledger[msg.sender], " << c.var_a << ");\n"
               << "        msg.sender.transfer(" << c.var_a << ");\n";
        }
    } else if (cls == "timestamp") {
        if (vulnerable) {
            os << "        if (block.timestamp > deadline) {\n"
               << "            ledger[msg.sender] = " << c.var_a << ";\n"
               << "        }\n";
        } else {
            os << "        if (round > deadline) {\n"
               << "            ledger[msg.sender] = " << c.var_a << ";\n"
               << "        }\n";
        }
    } else if (cls == "delegatecall") {
        if (vulnerable) {
            os << "        target.delegatecall(abi.encodeWithSignature(\"run(uint256)\", " << c.var_a
               << "));\n";
        } else {
            os << "        Runner(target).run(" << c.var_a << ");\n";
        }
    } else if (cls == "integer-overflow-underflow") {
        if (vulnerable) {
            os << "        ledger[msg.sender] += " << c.var_a << ";\n"
               << "        counter = counter + " << num(*c.rng) << ";\n";
        } else {
            os << "        ledger[msg.sender] = SafeMath.add(ledger[msg.sender], " << c.var_a << ");\n"
               << "        counter = SafeMath.add(counter, " << num(*c.rng) << ");\n";
        }
    } else if (cls == "cdav") {
        if (vulnerable) {
            os << "        deployed = new Child(" << c.var_a << ");\n"
               << "        registry[address(this)] = deployed;\n";
        } else {
            os << "        registry[owner] = lookup(" << c.var_a << ");\n";
        }
    } else {
        throw ConfigError("make_synthetic_corpus: unknown class " + cls);
    }
    os << "    }\n";
    return os.str();
}

std::string render_contract(Rng& rng, const std::string& cls, bool vulnerable, std::int64_t idx) {
    Ctx c;
    c.rng = &rng;
    c.contract = pick(rng, kContractNames, 10) + std::to_string(idx);
    c.var_a = pick(rng, kVarNames, 10);
    c.var_b = pick(rng, kVarNames, 10);
    c.func_a = pick(rng, kFuncNames, 10);
    do {
        c.func_b = pick(rng, kFuncNames, 10);
    } while (c.func_b == c.func_a);

    std::ostringstream os;
    os << "pragma solidity ^0.4." << (18 + rng.uniform_index(8)) << ";\n\n"
       << "// auto-generated fixture\n"
       << "contract " << c.contract << " {\n"
       << "    mapping(address => uint256) ledger;\n"
       << "    address owner;\n"
       << "    address target;\n"
       << "    uint256 deadline = " << num(rng) << ";\n"
       << "    uint256 round;\n"
       << "    uint256 counter;\n\n";
    const std::int64_t fillers_before = rng.uniform_index(2);
    for (std::int64_t i = 0; i <= fillers_before; ++i) os << filler_function(c) << "\n";
    os << payload_function(c, cls, vulnerable) << "\n";
    const std::int64_t fillers_after = rng.uniform_index(2);
    for (std::int64_t i = 0; i <= fillers_after; ++i) os << filler_function(c) << "\n";
    os << "}\n";
    return os.str();
}

}  // namespace

SynthResult make_synthetic_corpus(const std::vector<SynthSpec>& specs, std::uint64_t seed) {
    SynthResult out;
    Rng rng(seed);
    for (const auto& spec : specs) {
        if (!text::is_known_class(spec.cls))
            throw ConfigError("make_synthetic_corpus: unknown class " + spec.cls);
        if (spec.count < 20)
            throw ConfigError("make_synthetic_corpus: need at least 20 samples per class");
        const std::int64_t vulnerable = spec.count / 2;
        for (std::int64_t i = 0; i < spec.count; ++i) {
            const bool vuln = i < vulnerable;
            text::RawContract raw;
            raw.path = spec.cls + "_" + std::to_string(i) + (vuln ? "_v" : "_c") + ".sol";
            raw.source = render_contract(rng, spec.cls, vuln, i);
            raw.label_class = spec.cls;
            raw.label_flag = vuln ? 1 : 0;
            out.contracts.push_back(std::move(raw));
        }
    }
    return out;
}

void write_synthetic_corpus(const SynthResult& corpus, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream labels(join_path(dir, "labels.csv"));
    if (!labels) throw IoError("cannot write labels.csv in " + dir);
    labels << "filename,class,flag\n";
    for (const auto& c : corpus.contracts) {
        std::ofstream f(join_path(dir, c.path), std::ios::binary);
        if (!f) throw IoError("cannot write " + c.path);
        f << c.source;
        labels << c.path << "," << c.label_class << "," << c.label_flag << "\n";
    }
}

}  // namespace stip::harness
