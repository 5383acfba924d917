import pickle

import pytest

from jccscan.fusion import (
    ArchProfile,
    ProfileFormatError,
    UnknownProfileError,
    builtin_profile,
    dump_profile,
    is_fusible_pair,
    load_profile,
    parse_profile,
)
from jccscan.insn import (
    IMMEDIATE_AND_MEMORY_SOURCE,
    MEMORY_DESTINATION,
    RIP_RELATIVE,
    AdjacentPair,
    InstructionRecord,
    canonical_condition,
    decode_bytes,
    find_adjacent_pairs,
)


def make_pair(first, jump, traits=(), first_addr=0, first_len=3, jump_len=2):
    cond = canonical_condition(jump)
    return AdjacentPair(
        InstructionRecord(first_addr, first_len, first, traits=frozenset(traits)),
        InstructionRecord(first_addr + first_len, jump_len, "j" + cond, True, cond),
    )


@pytest.fixture(scope="module")
def sky():
    return builtin_profile("skylake_family")


def test_cmp_jz(sky):
    assert is_fusible_pair(sky, make_pair("cmp", "jz"))


def test_inc_jc(sky):
    assert not is_fusible_pair(sky, make_pair("inc", "jc"))


def test_zen2_sub(sky):
    zen2 = builtin_profile("zen2")
    assert not is_fusible_pair(zen2, make_pair("sub", "jz"))
    assert is_fusible_pair(zen2, make_pair("cmp", "jz"))
    assert is_fusible_pair(zen2, make_pair("test", "js"))
    assert set(zen2.fusible_table) == {"cmp", "test"}


def test_sub_jnz_decoded(sky):
    (pair,) = find_adjacent_pairs(decode_bytes(bytes.fromhex("4883e90175fa")))
    assert is_fusible_pair(sky, pair)


def test_rip_relative_cmp(sky):
    (pair,) = find_adjacent_pairs(decode_bytes(bytes.fromhex("483b05000000007400")))
    assert RIP_RELATIVE in pair.first.traits
    assert not is_fusible_pair(sky, pair)


def test_memory_destination_add(sky):
    (pair,) = find_adjacent_pairs(decode_bytes(bytes.fromhex("01007400")))
    assert not is_fusible_pair(sky, pair)


def test_immediate_and_memory_source(sky):
    (pair,) = find_adjacent_pairs(decode_bytes(bytes.fromhex("8338057400")))
    assert not is_fusible_pair(sky, pair)
    # register/memory compare without immediate still fuses
    (pair,) = find_adjacent_pairs(decode_bytes(bytes.fromhex("3b007400")))
    assert is_fusible_pair(sky, pair)


def test_test_js(sky):
    assert is_fusible_pair(sky, make_pair("test", "js"))


def test_negated_jumps_follow_flag(sky):
    no_neg = ArchProfile("strict", {"cmp": ["jz"]}, fuse_negated_jumps=False)
    assert is_fusible_pair(no_neg, make_pair("cmp", "je"))
    assert not is_fusible_pair(no_neg, make_pair("cmp", "jne"))
    assert is_fusible_pair(sky, make_pair("cmp", "jne"))


def test_address_independence(sky):
    for addr in (0, 27, 60, 63, 1 << 40):
        assert is_fusible_pair(sky, make_pair("sub", "jnz", first_addr=addr))
        assert not is_fusible_pair(sky, make_pair("sub", "js", first_addr=addr))


def test_exclusions_configurable():
    lax = ArchProfile("lax", {"add": ["jz"]}, operand_exclusions=())
    pair = make_pair("add", "jz", traits={MEMORY_DESTINATION})
    assert is_fusible_pair(lax, pair)
    assert not is_fusible_pair(builtin_profile("skylake_family"), pair)


def test_unknown_profile():
    with pytest.raises(UnknownProfileError):
        builtin_profile("icelake")
    with pytest.raises(UnknownProfileError):
        load_profile("no-such-profile-or-file")


def test_boundaries(sky):
    assert (sky.fetch_window, sky.exclusion_boundary, sky.cache_line) == (16, 32, 64)
    assert sky.operand_exclusions == {RIP_RELATIVE, MEMORY_DESTINATION, IMMEDIATE_AND_MEMORY_SOURCE}
    with pytest.raises(ProfileFormatError):
        ArchProfile("bad", {}, fetch_window=24)


@pytest.mark.parametrize("name", ["skylake_family", "zen2"])
def test_profile_file_round_trip(name, tmp_path):
    prof = builtin_profile(name)
    text = dump_profile(prof)
    assert parse_profile(text) == prof
    f = tmp_path / f"{name}.ini"
    f.write_text(text)
    assert load_profile(str(f)) == prof


def test_custom_profile_adds_rows():
    text = dump_profile(builtin_profile("skylake_family")).replace("[fusible]", "[fusible]\nor = jz")
    prof = parse_profile(text)
    assert is_fusible_pair(prof, make_pair("or", "jnz"))


def test_malformed_profile_file():
    with pytest.raises(ProfileFormatError):
        parse_profile("[profile]\nname = x\n")
    with pytest.raises(ProfileFormatError):
        parse_profile("[profile]\noperand_exclusions = bogus\n[fusible]\ncmp = jz\n")
    with pytest.raises(ProfileFormatError):
        parse_profile("[profile]\n[fusible]\ncmp = jq\n")


def test_profile_pickles(sky):
    assert pickle.loads(pickle.dumps(sky)) == sky
