"""Component composition: a pipeline is an ordered list of components folded
over a flat string-keyed state.

Reserved state keys are ``batch_questions``, ``batch_dialogue_session``,
``batch_source_documents``, and ``batch_answers``. Each component declares
``run_input_keys`` (the only keys it receives) and returns a mapping of
updates; later components overwrite earlier values, which is what lets an
appended filter rewrite the answers while passing sources through.
"""

import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .corpus import Passage, PassageStore
from .errors import ConfigError, IdentityMismatch, MissingKeyError, PipelineError
from .generation import (
    ClientBackend,
    GeneratorBackend,
    PromptAssembly,
    SamplingParams,
    assemble_prompt,
    build_fid_input,
)
from .llm import MockLLMClient, RemoteLLMClient
from .models import TinyDecoderLM, load_embedder, load_language_model
from .retrieval import VectorIndex, load_index

DEFAULT_TOP_K = 4


@dataclass
class Turn:
    role: str
    text: str
    timestamp: float = field(default_factory=time.time)

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role, "text": self.text, "ts": self.timestamp}


class DialogueSession:
    """Alternating user/assistant turns, append-only, starting with a user turn."""

    def __init__(self, session_id: str | None = None, turns: Sequence[Turn] = ()):
        self.session_id = session_id or uuid.uuid4().hex
        self.turns: list[Turn] = list(turns)

    def _append(self, role: str, text: str) -> Turn:
        expected = "user" if not self.turns or self.turns[-1].role == "assistant" else "assistant"
        if role != expected:
            raise ValueError(f"expected a {expected} turn, got {role}")
        turn = Turn(role=role, text=text)
        self.turns.append(turn)
        return turn

    def add_user(self, text: str) -> Turn:
        return self._append("user", text)

    def add_assistant(self, text: str) -> Turn:
        return self._append("assistant", text)

    def to_dict(self) -> dict[str, Any]:
        return {"session_id": self.session_id, "turns": [t.to_dict() for t in self.turns]}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "DialogueSession":
        turns = [
            Turn(role=t["role"], text=t["text"], timestamp=t.get("ts", 0.0))
            for t in record.get("turns", [])
        ]
        return cls(session_id=record.get("session_id"), turns=turns)


@dataclass
class RQAOutput:
    """The inter-component contract: answers, source passages, updated sessions."""

    batch_answers: list[str]
    batch_source_documents: list[list[Passage]]
    batch_dialogue_session: list[DialogueSession]

    def __post_init__(self):
        lengths = {
            len(self.batch_answers),
            len(self.batch_source_documents),
            len(self.batch_dialogue_session),
        }
        if len(lengths) != 1:
            raise ValueError(f"RQAOutput lists must align, got lengths {sorted(lengths)}")

    def to_state(self) -> dict[str, Any]:
        return {
            "batch_answers": self.batch_answers,
            "batch_source_documents": self.batch_source_documents,
            "batch_dialogue_session": self.batch_dialogue_session,
        }


class Component:
    """One pipeline stage. Subclasses set run_input_keys and implement run."""

    run_input_keys: list[str] = []

    def run(self, **kwargs) -> "Mapping[str, Any] | RQAOutput | None":
        raise NotImplementedError

    def manifest_config(self) -> dict[str, Any] | None:
        """Serializable config for the pipeline manifest; None = not serializable."""
        return None


@dataclass
class ComponentTiming:
    name: str
    seconds: float
    output_keys: list[str]


class RQAPipeline:
    """Left fold of components over the state map."""

    def __init__(self, components: Sequence[Component] = ()):
        self.components: list[Component] = list(components)

    def qa(
        self,
        batch_questions: Sequence[str],
        batch_dialogue_session: Sequence[DialogueSession],
    ) -> RQAOutput:
        output, _ = self.qa_with_timings(batch_questions, batch_dialogue_session)
        return output

    def qa_with_timings(
        self,
        batch_questions: Sequence[str],
        batch_dialogue_session: Sequence[DialogueSession],
    ) -> tuple[RQAOutput, list[ComponentTiming]]:
        if len(batch_questions) != len(batch_dialogue_session):
            raise ValueError("batch_questions and batch_dialogue_session must align")
        if not self.components:
            raise ConfigError("pipeline has no components")
        state: dict[str, Any] = {
            "batch_questions": list(batch_questions),
            "batch_dialogue_session": list(batch_dialogue_session),
        }
        timings: list[ComponentTiming] = []
        for index, component in enumerate(self.components):
            name = type(component).__name__
            inputs = {}
            for key in component.run_input_keys:
                if key not in state:
                    raise MissingKeyError(name, key)
                inputs[key] = state[key]
            started = time.monotonic()
            try:
                result = component.run(**inputs)
            except Exception as exc:
                raise PipelineError(index, name, exc) from exc
            if isinstance(result, RQAOutput):
                result = result.to_state()
            result = dict(result or {})
            state.update(result)
            timings.append(
                ComponentTiming(name=name, seconds=time.monotonic() - started, output_keys=list(result))
            )
        for key in ("batch_answers", "batch_source_documents"):
            if key not in state:
                raise ConfigError(f"pipeline finished without producing {key!r}")
        sessions = state["batch_dialogue_session"]
        answers = state["batch_answers"]
        for question, answer, session in zip(batch_questions, answers, sessions):
            session.add_user(question)
            session.add_assistant(answer)
        output = RQAOutput(
            batch_answers=list(answers),
            batch_source_documents=[list(docs) for docs in state["batch_source_documents"]],
            batch_dialogue_session=list(sessions),
        )
        return output, timings

    def manifest(self) -> dict[str, Any]:
        components = []
        for component in self.components:
            config = component.manifest_config()
            if config is None:
                raise ConfigError(
                    f"component {type(component).__name__} is not manifest-serializable"
                )
            components.append(config)
        return {"components": components}

    @property
    def identity(self) -> str:
        try:
            blob = json.dumps(self.manifest(), sort_keys=True)
        except ConfigError:
            blob = "|".join(type(c).__name__ for c in self.components)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2), encoding="utf-8")


class RetrieverComponent(Component):
    """Dense top-k retrieval over an exact index; query = the latest question."""

    run_input_keys = ["batch_questions"]

    def __init__(self, index: VectorIndex, embedder, store: PassageStore, k: int = DEFAULT_TOP_K):
        if index.embedder_identity != embedder.identity:
            raise IdentityMismatch(
                f"index was built with {index.embedder_identity!r}, embedder is {embedder.identity!r}"
            )
        self.index = index
        self.embedder = embedder
        self.store = store
        self.k = k
        self._config: dict[str, Any] | None = None

    def run(self, batch_questions: Sequence[str]) -> Mapping[str, Any]:
        batch_docs = []
        for question in batch_questions:
            hits = self.index.search(self.embedder, question, self.k)
            batch_docs.append([self.store.get(pid) for pid in hits.passage_ids])
        return {"batch_source_documents": batch_docs}

    def manifest_config(self) -> dict[str, Any] | None:
        return self._config


class GeneratorComponent(Component):
    """Generates one answer per question from the retrieved passages."""

    run_input_keys = ["batch_questions", "batch_source_documents", "batch_dialogue_session"]

    def __init__(
        self,
        backend: GeneratorBackend,
        assembly: PromptAssembly | None = None,
        sampling: SamplingParams | None = None,
        per_passage_budget: int = 128,
    ):
        self.backend = backend
        self.assembly = assembly or PromptAssembly()
        self.sampling = sampling or SamplingParams()
        self.per_passage_budget = per_passage_budget
        self._config: dict[str, Any] | None = None

    def run(
        self,
        batch_questions: Sequence[str],
        batch_source_documents: Sequence[Sequence[Passage]],
        batch_dialogue_session: Sequence[DialogueSession],
    ) -> Mapping[str, Any]:
        answers = []
        for question, passages, session in zip(
            batch_questions, batch_source_documents, batch_dialogue_session
        ):
            if self.backend.is_encoder_decoder:
                prompt: Any = build_fid_input(question, list(passages), self.per_passage_budget)
            else:
                prompt = assemble_prompt(question, passages, session, self.assembly)
            answers.append(self.backend.generate(prompt, self.sampling))
        return {"batch_answers": answers}

    def manifest_config(self) -> dict[str, Any] | None:
        return self._config


class DontKnowSafetyFilter(Component):
    """Example extension: rewrite every answer, pass sources through untouched."""

    run_input_keys = [
        "batch_questions",
        "batch_source_documents",
        "batch_dialogue_session",
        "batch_answers",
    ]

    def __init__(self, message: str = "I don't know."):
        self.message = message

    def run(self, **kwargs) -> RQAOutput:
        return RQAOutput(
            batch_answers=[self.message for _ in kwargs["batch_answers"]],
            batch_source_documents=kwargs["batch_source_documents"],
            batch_dialogue_session=kwargs["batch_dialogue_session"],
        )

    def manifest_config(self) -> dict[str, Any]:
        return {"type": "dont_know_filter", "message": self.message}


class MockQAComponent(Component):
    """Deterministic stand-in pipeline stage for serving tests and UI demos."""

    run_input_keys = ["batch_questions"]

    def __init__(self, answer_prefix: str = "echo: ", sources: Sequence[Mapping[str, Any]] = ()):
        self.answer_prefix = answer_prefix
        self.sources = [
            Passage(
                passage_id=s.get("passage_id", f"mock{i:04d}"),
                content=s.get("content", ""),
                source=s.get("source", "mock"),
                seq_num=int(s.get("seq_num", i)),
                token_count=int(s.get("token_count", len(str(s.get("content", "")).split()))),
            )
            for i, s in enumerate(sources)
        ]

    def run(self, batch_questions: Sequence[str]) -> Mapping[str, Any]:
        return {
            "batch_answers": [f"{self.answer_prefix}{q}" for q in batch_questions],
            "batch_source_documents": [list(self.sources) for _ in batch_questions],
        }

    def manifest_config(self) -> dict[str, Any]:
        return {
            "type": "mock_qa",
            "answer_prefix": self.answer_prefix,
            "sources": [p.to_dict() for p in self.sources],
        }


def _resolve_generator_backend(spec: str) -> GeneratorBackend:
    """Backend from a checkpoint dir or a ``mock:``/``remote:`` identity string."""
    from .generation import TinyDecoderBackend, TinyEncoderDecoderBackend

    if spec.startswith("mock"):
        return ClientBackend(MockLLMClient())
    if spec.startswith("remote"):
        return ClientBackend(RemoteLLMClient())
    model, vocab = load_language_model(spec)
    if isinstance(model, TinyDecoderLM):
        return TinyDecoderBackend(model, vocab)
    return TinyEncoderDecoderBackend(model, vocab)


class SimpleRQA(RQAPipeline):
    """Ready-made retriever → generator pipeline."""

    @classmethod
    def from_scratch(
        cls,
        database_path: str | Path,
        embedding_model_name_or_path: str,
        qa_model_name_or_path: str,
        k: int = DEFAULT_TOP_K,
        prompt_budget: int = 1024,
        max_new_tokens: int = 64,
    ) -> "SimpleRQA":
        """Assemble from a database directory (passages.jsonl + index.rqaidx)
        plus embedder/generator checkpoints or ``mock:``/``remote:`` specs."""
        database_path = Path(database_path)
        store = PassageStore.load(database_path / "passages.jsonl")
        index = load_index(database_path / "index.rqaidx")
        embedder = load_embedder(embedding_model_name_or_path)
        retriever = RetrieverComponent(index, embedder, store, k=k)
        retriever._config = {
            "type": "retriever",
            "database_path": str(database_path),
            "embedder_ckpt": str(embedding_model_name_or_path),
            "k": k,
        }
        backend = _resolve_generator_backend(str(qa_model_name_or_path))
        assembly = PromptAssembly(budget=prompt_budget)
        generator = GeneratorComponent(
            backend, assembly, SamplingParams(max_new_tokens=max_new_tokens)
        )
        generator._config = {
            "type": "generator",
            "generator": str(qa_model_name_or_path),
            "prompt_budget": prompt_budget,
            "max_new_tokens": max_new_tokens,
        }
        return cls([retriever, generator])


ComponentBuilder = Callable[[dict[str, Any]], Component]
_COMPONENT_BUILDERS: dict[str, ComponentBuilder] = {}


def register_component(type_name: str, builder: ComponentBuilder) -> None:
    _COMPONENT_BUILDERS[type_name] = builder


def _build_retriever(config: dict[str, Any]) -> Component:
    database_path = Path(config["database_path"])
    store = PassageStore.load(database_path / "passages.jsonl")
    index = load_index(database_path / "index.rqaidx")
    embedder = load_embedder(config["embedder_ckpt"])
    component = RetrieverComponent(index, embedder, store, k=int(config.get("k", DEFAULT_TOP_K)))
    component._config = dict(config)
    return component


def _build_generator(config: dict[str, Any]) -> Component:
    budget = int(config.get("prompt_budget", 1024))
    max_new = int(config.get("max_new_tokens", 64))
    backend = _resolve_generator_backend(str(config["generator"]))
    component = GeneratorComponent(
        backend, PromptAssembly(budget=budget), SamplingParams(max_new_tokens=max_new)
    )
    component._config = dict(config)
    return component


register_component("retriever", _build_retriever)
register_component("generator", _build_generator)
register_component(
    "dont_know_filter", lambda cfg: DontKnowSafetyFilter(cfg.get("message", "I don't know."))
)
register_component(
    "mock_qa",
    lambda cfg: MockQAComponent(cfg.get("answer_prefix", "echo: "), cfg.get("sources", [])),
)


def build_pipeline(manifest: Mapping[str, Any]) -> RQAPipeline:
    components = []
    for config in manifest["components"]:
        type_name = config.get("type")
        if type_name not in _COMPONENT_BUILDERS:
            raise ConfigError(f"unknown component type {type_name!r}")
        components.append(_COMPONENT_BUILDERS[type_name](dict(config)))
    return RQAPipeline(components)


def load_pipeline(path: str | Path) -> RQAPipeline:
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    return build_pipeline(manifest)
