"""Answer generation: prompt assembly, local tiny backends, FiD composition,
and the retrying remote path.

All backends share one interface — ``generate`` plus ``loglikelihood`` — so
pipelines, trainers, and the evaluation harness stay agnostic about whether
answers come from a local decoder, a fusion-in-decoder encoder-decoder, or a
remote HTTP model.
"""

import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import torch

from .errors import BudgetError, ConfigError, EmptyContinuation, GenerationBackendError
from .llm import LLMClient, SamplingParams
from .models import BOS, EOS, TinyDecoderLM, TinyEncoderDecoder, WordVocab, _state_digest
from .templates import PromptTemplate, load_default
from .tokenization import Tokenizer, WhitespaceTokenizer

DEFAULT_PROMPT_BUDGET = 1024


@dataclass
class FiDInput:
    """k encoder inputs, one per passage, each pairing the question with a passage."""

    question: str
    contexts: list[str]

    def __post_init__(self):
        if not self.contexts:
            raise ConfigError("FiDInput needs at least one passage")


def build_fid_input(
    question: str, passages: Sequence, per_passage_budget: int = 128
) -> FiDInput:
    """Pair the question with each passage, truncating each context independently."""
    contexts = []
    for passage in passages:
        content = passage.content if hasattr(passage, "content") else str(passage)
        text = f"question: {question} context: {content}"
        tokens = text.split()
        contexts.append(" ".join(tokens[:per_passage_budget]))
    return FiDInput(question=question, contexts=contexts)


@dataclass
class PromptAssembly:
    """Template + budget for flat (single-string) prompts.

    Slots: {history}, {passages}, {question}. The question is never truncated;
    passages are dropped whole from the end of the retrieved list when the
    budget is exceeded, then history turns oldest-first.
    """

    template: PromptTemplate = field(default_factory=lambda: load_default("chat"))
    passage_separator: str = "\n\n"
    budget: int = DEFAULT_PROMPT_BUDGET
    tokenizer: Tokenizer = field(default_factory=WhitespaceTokenizer)


def _render_history(turns: Sequence[tuple[str, str]]) -> str:
    lines = [f"{'User' if role == 'user' else 'Assistant'}: {text}" for role, text in turns]
    return "\n".join(lines) + "\n" if lines else ""


def assemble_prompt(
    question: str,
    passages: Sequence,
    session=None,
    assembly: PromptAssembly | None = None,
) -> str:
    """Fill the assembly template, enforcing the token budget.

    ``session`` may be a DialogueSession or any iterable of (role, text)
    pairs; turns render oldest-first.
    """
    assembly = assembly or PromptAssembly()
    texts = [p.content if hasattr(p, "content") else str(p) for p in passages]
    if session is None:
        turns: list[tuple[str, str]] = []
    elif hasattr(session, "turns"):
        turns = [(t.role, t.text) for t in session.turns]
    else:
        turns = [(role, text) for role, text in session]

    def render(kept_passages: list[str], kept_turns: list[tuple[str, str]]) -> str:
        return assembly.template.render(
            history=_render_history(kept_turns),
            passages=assembly.passage_separator.join(kept_passages),
            question=question,
        )

    count = lambda text: len(assembly.tokenizer.tokenize(text))
    kept_passages, kept_turns = list(texts), list(turns)
    prompt = render(kept_passages, kept_turns)
    while count(prompt) > assembly.budget and kept_passages:
        kept_passages.pop()
        prompt = render(kept_passages, kept_turns)
    while count(prompt) > assembly.budget and kept_turns:
        kept_turns.pop(0)
        prompt = render(kept_passages, kept_turns)
    if count(prompt) > assembly.budget:
        raise BudgetError(
            f"budget of {assembly.budget} tokens cannot fit the question and template"
        )
    return prompt


class GeneratorBackend(Protocol):
    """Text-generation backend; deterministic at temperature 0."""

    identity: str
    is_encoder_decoder: bool
    max_concurrency: int

    def generate(self, prompt: "str | FiDInput", sampling: SamplingParams | None = None) -> str: ...

    def loglikelihood(self, context: str, continuation: str) -> float: ...


def _pick_next(logits: torch.Tensor, sampling: SamplingParams, generator) -> int:
    if sampling.temperature <= 0:
        return int(torch.argmax(logits).item())
    probs = torch.softmax(logits / sampling.temperature, dim=-1)
    if sampling.top_p < 1.0:
        sorted_probs, order = torch.sort(probs, descending=True)
        keep = torch.cumsum(sorted_probs, dim=-1) - sorted_probs < sampling.top_p
        keep[0] = True
        mask = torch.zeros_like(probs, dtype=torch.bool)
        mask[order[keep]] = True
        probs = torch.where(mask, probs, torch.zeros_like(probs))
        probs = probs / probs.sum()
    return int(torch.multinomial(probs, 1, generator=generator).item())


class TinyDecoderBackend:
    """Prompt-concatenation backend over a TinyDecoderLM."""

    is_encoder_decoder = False
    max_concurrency = 1

    def __init__(self, model: TinyDecoderLM, vocab: WordVocab):
        self.model = model
        self.vocab = vocab

    @property
    def identity(self) -> str:
        return f"tiny-decoder:v{len(self.vocab)}:{_state_digest(self.model)}"

    def generate(self, prompt: "str | FiDInput", sampling: SamplingParams | None = None) -> str:
        if isinstance(prompt, FiDInput):
            raise ConfigError("decoder-only backend cannot consume FiD inputs")
        sampling = sampling or SamplingParams()
        ids = [BOS] + self.vocab.encode(prompt)
        generator = torch.Generator()
        generator.manual_seed(sampling.seed if sampling.seed is not None else 0)
        out: list[int] = []
        self.model.eval()
        with torch.no_grad():
            for _ in range(sampling.max_new_tokens):
                logits = self.model(torch.tensor([ids + out], dtype=torch.long))[0, -1]
                nxt = _pick_next(logits, sampling, generator)
                if nxt == EOS:
                    break
                out.append(nxt)
        return self.vocab.decode(out)

    def loglikelihood(self, context: str, continuation: str) -> float:
        cont_ids = self.vocab.encode(continuation)
        if not cont_ids:
            raise EmptyContinuation("continuation tokenizes to nothing")
        ctx_ids = [BOS] + self.vocab.encode(context)
        ids = torch.tensor([ctx_ids + cont_ids], dtype=torch.long)
        self.model.eval()
        with torch.no_grad():
            logprobs = torch.log_softmax(self.model(ids)[0], dim=-1)
        total = 0.0
        for position, token in enumerate(cont_ids):
            total += float(logprobs[len(ctx_ids) - 1 + position, token])
        return total


class TinyEncoderDecoderBackend:
    """Encoder-decoder backend; accepts flat prompts or FiD inputs."""

    is_encoder_decoder = True
    max_concurrency = 1

    def __init__(self, model: TinyEncoderDecoder, vocab: WordVocab):
        self.model = model
        self.vocab = vocab

    @property
    def identity(self) -> str:
        return f"tiny-encdec:v{len(self.vocab)}:{_state_digest(self.model)}"

    def _memory(self, prompt: "str | FiDInput") -> torch.Tensor:
        if isinstance(prompt, FiDInput):
            id_lists = [self.vocab.encode(ctx) or [EOS] for ctx in prompt.contexts]
            return self.model.encode_fid(id_lists)
        return self.model.encode(torch.tensor([self.vocab.encode(prompt) or [EOS]], dtype=torch.long))

    def generate(self, prompt: "str | FiDInput", sampling: SamplingParams | None = None) -> str:
        sampling = sampling or SamplingParams()
        generator = torch.Generator()
        generator.manual_seed(sampling.seed if sampling.seed is not None else 0)
        self.model.eval()
        with torch.no_grad():
            memory = self._memory(prompt)
            out = [BOS]
            for _ in range(sampling.max_new_tokens):
                logits = self.model.decode(memory, torch.tensor([out], dtype=torch.long))[0, -1]
                nxt = _pick_next(logits, sampling, generator)
                if nxt == EOS:
                    break
                out.append(nxt)
        return self.vocab.decode(out)

    def loglikelihood(self, context: str, continuation: str) -> float:
        cont_ids = self.vocab.encode(continuation)
        if not cont_ids:
            raise EmptyContinuation("continuation tokenizes to nothing")
        self.model.eval()
        with torch.no_grad():
            memory = self._memory(context)
            decoder_ids = torch.tensor([[BOS] + cont_ids], dtype=torch.long)
            logprobs = torch.log_softmax(self.model.decode(memory, decoder_ids)[0], dim=-1)
        return float(sum(logprobs[pos, tok] for pos, tok in enumerate(cont_ids)))

    def cross_attention_scores(
        self, question: str, passages: Sequence[str], answer: str, per_passage_budget: int = 128
    ) -> tuple[torch.Tensor, list[int]]:
        """Teacher-forced cross-attention over the k passages' encoder tokens.

        Returns ([layers, heads, decoder_len, total_encoder_len], token counts
        per passage) for distillation targets.
        """
        fid = build_fid_input(question, passages, per_passage_budget)
        id_lists = [self.vocab.encode(ctx) or [EOS] for ctx in fid.contexts]
        decoder_ids = torch.tensor([[BOS] + (self.vocab.encode(answer) or [EOS])], dtype=torch.long)
        self.model.eval()
        with torch.no_grad():
            attention = self.model.cross_attention(id_lists, decoder_ids)
        return attention, [len(ids) for ids in id_lists]


class ClientBackend:
    """Wraps an LLMClient (mock or remote) as a generation backend."""

    is_encoder_decoder = False
    max_concurrency = 4

    def __init__(self, client: LLMClient):
        self.client = client

    @property
    def identity(self) -> str:
        return f"client:{self.client.identity}"

    def generate(self, prompt: "str | FiDInput", sampling: SamplingParams | None = None) -> str:
        if isinstance(prompt, FiDInput):
            raise ConfigError("client backends cannot consume FiD inputs")
        return remote_generate(self.client, prompt, sampling)

    def loglikelihood(self, context: str, continuation: str) -> float:
        raise ConfigError("client backends do not expose token log-likelihoods")


def remote_generate(
    client: LLMClient,
    prompt: str,
    sampling: SamplingParams | None = None,
    max_attempts: int = 3,
    backoff: float = 0.5,
) -> str:
    """Call the client, retrying transient failures with exponential backoff."""
    last: Exception | None = None
    for attempt in range(max_attempts):
        try:
            return client.generate(prompt, sampling)
        except GenerationBackendError as exc:
            last = exc
            if attempt + 1 < max_attempts:
                time.sleep(backoff * (2**attempt))
    raise GenerationBackendError(f"generation failed after {max_attempts} attempts") from last


def fid_generate(
    backend: GeneratorBackend, fid_input: FiDInput, sampling: SamplingParams | None = None
) -> str:
    """Generate from k independently encoded (question, passage) inputs."""
    if not backend.is_encoder_decoder:
        raise ConfigError("fusion-in-decoder generation needs an encoder-decoder backend")
    return backend.generate(fid_input, sampling)


def answer_loglikelihood(
    backend: GeneratorBackend,
    question: str,
    passage,
    answer: str,
    assembly: PromptAssembly | None = None,
) -> float:
    """Sum of answer-token log-probabilities given the assembled prompt."""
    if not answer.strip():
        raise EmptyContinuation("empty answer")
    prompt = assemble_prompt(question, [passage], session=None, assembly=assembly)
    return backend.loglikelihood(prompt, answer)
