import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from skillcalc.expr import detokenize, evaluate_text, generate_sample, parse_task_id, tokenize
from skillcalc.expr.alphabet import BLANK, PLUS
from skillcalc.ism import (
    CapacityExceeded, CompositeAction, EmptyMemory, InteractiveSkillModule,
    MissingModule, SkillRegistry, apply_action, format_trace, head_entropy,
    init_memory, join_reads, joint_logp, replay, rollout, run_episode,
)
from skillcalc.nn import SubstrateConfig
from skillcalc.nn.gradcheck import finite_difference_check
from skillcalc.registry import scripted_registry
from skillcalc.scripted import (
    ScriptedSkill, UnsupportedTask, add_policy, expression_policy,
    multiply_policy, policy_for, run_scripted,
)
from skillcalc.skills import HALT, MemoSkill, OracleSkill, Skill, SubmoduleError


@pytest.fixture(scope="module")
def skills():
    return scripted_registry()


def registry_of(skills, *names):
    return SkillRegistry([skills[n] for n in names])


def test_init_memory():
    assert init_memory(tokenize("12*34")) == [1, 2, 12, 3, 4]
    with pytest.raises(CapacityExceeded):
        init_memory([1] * 65)
    with pytest.raises(EmptyMemory):
        init_memory([])


def test_registry_has_halt_first():
    reg = SkillRegistry([OracleSkill("S+S")])
    assert reg.names == ["HALT", "S+S"]
    assert reg.index("S+S") == 1
    with pytest.raises(MissingModule):
        reg.index("M+M")


def test_apply_action_splices_sub_result():
    reg = SkillRegistry([OracleSkill("S*S")])
    mem = tokenize("3*4+5")
    new, inv = apply_action(mem, CompositeAction(1, (0, 3), (0, 0), (0, 3)), reg)
    assert detokenize(new) == "12+5"
    assert inv.read == tokenize("3*4") and inv.output == tokenize("12")


def test_halt_keeps_memory():
    reg = SkillRegistry()
    new, _ = apply_action(tokenize("17"), CompositeAction(0), reg)
    assert detokenize(new) == "17"


def test_growing_write():
    reg = SkillRegistry([OracleSkill("M*M")])
    mem = tokenize("99*99")
    new, _ = apply_action(mem, CompositeAction(1, (0, 5), (0, 0), (4, 5)), reg)
    assert len(new) == len(mem) - 1 + 4


def test_rejected_call_writes_blank():
    reg = SkillRegistry([OracleSkill("S+S")])
    new, inv = apply_action(tokenize("12+3"), CompositeAction(1, (0, 4), (0, 0), (0, 2)), reg)
    assert new == [BLANK] + list(tokenize("+3"))
    assert inv.error


def test_overflow_raises():
    reg = SkillRegistry([OracleSkill("M*M")])
    mem = tokenize("9" * 30 + "*" + "9" * 30)
    with pytest.raises(CapacityExceeded):
        apply_action(mem, CompositeAction(1, (0, 61), (0, 0), (61, 61)), reg)


def test_join_inserts_operator_between_bare_operands():
    assert join_reads(tokenize("7"), tokenize("5"), PLUS) == tokenize("7+5")
    assert join_reads(tokenize("7+"), tokenize("5"), PLUS) == tokenize("7+5")
    assert join_reads(tokenize("7"), (), PLUS) == tokenize("7")
    assert join_reads(tokenize("7"), tokenize("5"), None) == tokenize("75")
    assert join_reads((BLANK, 7), (5, BLANK), PLUS) == tokenize("7+5")


def test_action_spans_clamped_and_validated():
    a = CompositeAction.from_pointers(1, [3, 1, 2, 2, 0, 4])
    assert a.read1 == (3, 3) and a.read2 == (2, 2) and a.write == (0, 4)
    with pytest.raises(ValueError):
        a.validate(3, 2)


@settings(max_examples=200, deadline=None)
@given(st.text("0123456789+*", min_size=1, max_size=12),
       st.lists(st.integers(0, 12), min_size=6, max_size=6), st.integers(0, 2))
def test_splice_length_invariant(text, ptrs, module):
    reg = SkillRegistry([OracleSkill("S+S"), OracleSkill("M*M")])
    mem = list(tokenize(text))
    ptrs = [min(p, len(mem)) for p in ptrs]
    action = CompositeAction.from_pointers(module, ptrs)
    new, inv = apply_action(mem, action, reg)
    if module == 0:
        assert new == mem
    else:
        s, e = action.write
        assert len(new) == len(mem) - (e - s) + len(inv.output)


def small_ism(n_modules, seed=0, t_max=40, dtype="float32"):
    return InteractiveSkillModule("T", n_modules, SubstrateConfig(hidden_size=8, embedding_size=4,
                                                                  seed=seed, dtype=dtype), t_max=t_max)


def test_encode_state_single_token_uses_same_key_twice():
    ism = small_ism(2)
    s, h, keys, mask = ism.encode_state([[5]], ism.initial_state(1))
    assert keys.shape == (1, 2, 16) and mask.tolist() == [[True, True]]
    assert torch.equal(keys[0, 1], ism.store["end_key"])


def test_encode_state_deterministic_and_batch_independent():
    ism = small_ism(3)
    mems = [list(tokenize("12+7")), list(tokenize("3"))]
    a = ism.step(mems, ism.initial_state(2))
    b = ism.step(mems[1:], ism.initial_state(1))
    assert torch.allclose(a[0][1], b[0][0], atol=1e-6)
    assert torch.allclose(a[1][1, :, :2], b[1][0], atol=1e-6)
    c = ism.step(mems, ism.initial_state(2))
    assert all(torch.equal(x, y) for x, y in zip(a, c))


def test_policy_heads_normalised():
    ism = small_ism(4)
    module_logp, ptr_logp, value, _ = ism.step([list(tokenize("47+85"))], ism.initial_state(1))
    assert abs(module_logp.exp().sum().item() - 1) < 1e-6
    assert torch.allclose(ptr_logp.exp().sum(-1), torch.ones(1, 6), atol=1e-6)
    assert ptr_logp.shape == (1, 6, 6) and value.shape == (1,)
    halt_only = small_ism(1)
    assert halt_only.step([[1]], halt_only.initial_state(1))[0].exp().item() == 1.0


def test_heads_normalised_to_double_precision():
    ism = small_ism(4, dtype="float64")
    module_logp, ptr_logp, _, _ = ism.step([list(tokenize("47+85"))], ism.initial_state(1))
    assert abs(module_logp.exp().sum().item() - 1) < 1e-12
    assert torch.allclose(ptr_logp.exp().sum(-1), torch.ones(1, 6, dtype=torch.float64), atol=1e-12)


def test_gradcheck_through_encode_state():
    ism = small_ism(3, dtype="float64")
    proj = torch.as_tensor(np.random.default_rng(0).normal(size=(2, 8)))
    mems = [list(tokenize("12+7")), list(tokenize("3*4"))]

    def loss():
        s, h, keys, mask = ism.encode_state(mems, ism.initial_state(2))
        return (s * proj).sum() + keys[mask].sum() * 0.1
    err, n = finite_difference_check(loss, ism.store, max_entries=16)
    assert err < 1e-4 and n > 0


def test_halt_only_registry_ends_at_step_one():
    ism = small_ism(1)
    traj = run_episode(ism, SkillRegistry(), tokenize("2+3"))
    assert len(traj) == 1 and traj.output == tokenize("2+3") and traj.status == "halt"


def test_greedy_rollout_deterministic_and_bounded():
    reg = SkillRegistry([OracleSkill("S+S")])
    ism = small_ism(2, seed=3, t_max=7)
    inputs = [tokenize("4+5"), tokenize("47+85")]
    a = rollout(ism, reg, inputs)
    b = rollout(ism, reg, inputs)
    for x, y in zip(a, b):
        assert [s.action for s in x.steps] == [s.action for s in y.steps]
        assert len(x) <= 7


def test_sampled_rollout_seeded():
    reg = SkillRegistry([OracleSkill("S+S")])
    ism = small_ism(2, seed=1)
    inputs = [tokenize("4+5")] * 8
    a = rollout(ism, reg, inputs, greedy=False, rng=np.random.default_rng(5))
    b = rollout(ism, reg, inputs, greedy=False, rng=np.random.default_rng(5))
    assert [[s.action for s in t.steps] for t in a] == [[s.action for s in t.steps] for t in b]


def test_joint_logp_is_sum_of_components_and_replay_matches():
    reg = SkillRegistry([OracleSkill("S+S")])
    ism = small_ism(2, seed=2, dtype="float64")
    trajs = rollout(ism, reg, [tokenize("47+85"), tokenize("3+4"), tokenize("9")],
                    greedy=False, rng=np.random.default_rng(0))
    h = ism.initial_state(1)
    for st in trajs[0].steps:
        module_logp, ptr_logp, _, h = ism.step([list(st.memory)], h)
        parts = [module_logp[0, st.action.module].item()]
        parts += [ptr_logp[0, k, p].item() for k, p in enumerate(st.pointers)]
        assert abs(sum(parts) - st.logp) < 1e-10
    logp, ent, val = replay(ism, trajs)
    recorded = np.array([s.logp for t in trajs for s in t.steps])
    np.testing.assert_allclose(logp.detach().numpy(), recorded, atol=1e-10)
    assert bool((ent >= 0).all())


def test_entropy_bounded_by_log_arity():
    ism = small_ism(3)
    module_logp, ptr_logp, _, _ = ism.step([list(tokenize("12+34"))], ism.initial_state(1))
    from skillcalc.nn import entropy_from_logp
    assert 0 <= entropy_from_logp(module_logp).item() <= np.log(3) + 1e-6
    pe = entropy_from_logp(ptr_logp)
    assert bool((pe >= 0).all()) and bool((pe <= np.log(6) + 1e-6).all())
    assert head_entropy(module_logp, ptr_logp).item() <= np.log(3) + 6 * np.log(6) + 1e-5


def test_skill_outputs_match_standalone_calls():
    calls = []

    class Spy(Skill):
        name = "S+S"
        operator = PLUS

        def __call__(self, tokens):
            calls.append(tuple(tokens))
            return OracleSkill("S+S")(tokens)

    reg = SkillRegistry([Spy()])
    ism = small_ism(2, seed=4)
    trajs = rollout(ism, reg, [tokenize("4+5")] * 16, greedy=False, rng=np.random.default_rng(1))
    standalone = OracleSkill("S+S")
    for t in trajs:
        for st in t.steps:
            inv = st.invocation
            if inv is not None and inv.module == "S+S" and not inv.error:
                assert inv.output == standalone(inv.read)


def test_trace_format():
    reg = SkillRegistry([OracleSkill("S*S")])
    traj = run_scripted(expression_policy, SkillRegistry([OracleSkill(f"M{o}M", signed=True) for o in "+-*/"]),
                        tokenize("3*4+5"))
    lines = format_trace(traj, SkillRegistry([OracleSkill(f"M{o}M", signed=True) for o in "+-*/"]))
    assert lines[0] == "1 | 3*4+5 | M*M | [0,3) [0,0) | [0,3) | 12"
    assert lines[-1].split(" | ")[2] == "HALT"


@pytest.mark.parametrize("text", ["47+85", "99+99", "123+9", "9+991", "0+0", "5+995", "1+2"])
def test_scripted_addition_examples(skills, text):
    traj = run_scripted(add_policy, registry_of(skills, "S+S"), tokenize(text))
    assert detokenize(traj.output) == str(evaluate_text(text))


def test_scripted_multiply_example(skills):
    traj = run_scripted(multiply_policy, registry_of(skills, "S+S", "S*S", "M+M"), tokenize("234*6"))
    assert detokenize(traj.output) == "1404"


def test_scripted_expression_example(skills):
    traj = run_scripted(expression_policy, SkillRegistry([OracleSkill(f"M{o}M", signed=True) for o in "+-*/"]),
                        tokenize("(2+3)*4"))
    assert detokenize(traj.output) == "20"


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10 ** 9), st.integers(0, 10 ** 9))
def test_scripted_addition_any_digits(a, b):
    reg = SkillRegistry([OracleSkill("S+S")])
    traj = run_scripted(add_policy, reg, tokenize(f"{a}+{b}"))
    assert traj.output == tokenize(str(a + b))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 9))
def test_scripted_multiply_any_digits(a, s):
    reg = SkillRegistry([OracleSkill("S+S"), OracleSkill("S*S"),
                         ScriptedSkill("M+M", SkillRegistry([OracleSkill("S+S")]), PLUS)])
    traj = run_scripted(multiply_policy, reg, tokenize(f"{a}*{s}"))
    assert traj.output == tokenize(str(a * s))


def test_scripted_expressions_with_negative_intermediates():
    reg = SkillRegistry([OracleSkill(f"M{o}M", signed=True) for o in "+-*/"])
    for text in ["2-5+4", "3-(2-5)", "4+(2-5)*2", "1-9*9", "(1-9)/4", "8/(3-7)"]:
        traj = run_scripted(expression_policy, reg, tokenize(text))
        assert traj.output == tokenize(str(evaluate_text(text))), text


def test_scripted_uses_only_registry_modules(skills):
    with pytest.raises(MissingModule):
        run_scripted(add_policy, SkillRegistry([OracleSkill("S*S")]), tokenize("4+5"))
    with pytest.raises(UnsupportedTask):
        policy_for("M/M")


def test_scripted_with_random_generated_inputs(skills):
    rng = np.random.default_rng(0)
    spec = parse_task_id("M*S")
    reg = registry_of(skills, "S+S", "S*S", "M+M")
    for _ in range(100):
        s = generate_sample(spec, rng)
        assert run_scripted(multiply_policy, reg, s.input_ids).output == s.truth_ids


def test_memo_skill_caches_rejections():
    calls = []

    class Counting(Skill):
        name = "X"

        def __call__(self, tokens):
            calls.append(tokens)
            raise SubmoduleError("no")

    memo = MemoSkill(Counting())
    for _ in range(3):
        with pytest.raises(SubmoduleError):
            memo((1,))
    assert len(calls) == 1
