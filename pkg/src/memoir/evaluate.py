"""Question-answering evaluation over an ingested engine.

Each case is answered from memory and scored with token F1 and BLEU-1;
means are reported per category and overall. An LLM-judge hook exists but is
never required: it only runs when a judge provider and an external prompt
template are supplied.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .engine import MemoryEngine
from .gateway import ChatRequest, LLMGateway, RoleTag
from .metrics import bleu1, token_f1

UNCATEGORIZED = "uncategorized"

# judge hook signature: (question, gold_answer, answer) -> score in [0, 1]
JudgeFn = Callable[[str, str, str], float]


@dataclass(frozen=True)
class EvalCase:
    question: str
    gold_answer: str
    category: str | None = None

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.gold_answer.strip():
            raise ValueError("eval case question and gold_answer must be non-empty")


@dataclass
class CaseResult:
    question: str
    gold_answer: str
    answer: str
    category: str
    f1: float
    bleu1: float
    judge: float | None = None
    error: str | None = None
    answer_seconds: float = 0.0

    def to_json(self) -> dict:
        data = {
            "question": self.question,
            "gold_answer": self.gold_answer,
            "answer": self.answer,
            "category": self.category,
            "f1": self.f1,
            "bleu1": self.bleu1,
            "answer_seconds": round(self.answer_seconds, 4),
        }
        if self.judge is not None:
            data["judge"] = self.judge
        if self.error is not None:
            data["error"] = self.error
        return data


@dataclass
class EvalReport:
    results: list[CaseResult] = field(default_factory=list)

    def _mean(self, values: list[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    def categories(self) -> list[str]:
        seen: dict[str, None] = {}
        for result in self.results:
            seen.setdefault(result.category)
        return sorted(seen)

    def summary(self) -> dict:
        by_category = {}
        for category in self.categories():
            rows = [r for r in self.results if r.category == category]
            by_category[category] = {
                "count": len(rows),
                "f1": self._mean([r.f1 for r in rows]),
                "bleu1": self._mean([r.bleu1 for r in rows]),
            }
        overall = {
            "count": len(self.results),
            "f1": self._mean([r.f1 for r in self.results]),
            "bleu1": self._mean([r.bleu1 for r in self.results]),
        }
        judged = [r.judge for r in self.results if r.judge is not None]
        if judged:
            overall["judge"] = self._mean(judged)
        return {"overall": overall, "by_category": by_category}

    def to_json(self) -> dict:
        return {"summary": self.summary(), "cases": [r.to_json() for r in self.results]}

    def to_table(self) -> str:
        summary = self.summary()
        width = max([len(UNCATEGORIZED), *(len(c) for c in summary["by_category"])], default=12)
        header = f"{'category'.ljust(width)}  {'n':>4}  {'F1':>7}  {'BLEU-1':>7}"
        rows = [header, "-" * len(header)]
        for category, stats in summary["by_category"].items():
            rows.append(
                f"{category.ljust(width)}  {stats['count']:>4}  "
                f"{stats['f1']:>7.4f}  {stats['bleu1']:>7.4f}"
            )
        overall = summary["overall"]
        rows.append("-" * len(header))
        rows.append(
            f"{'overall'.ljust(width)}  {overall['count']:>4}  "
            f"{overall['f1']:>7.4f}  {overall['bleu1']:>7.4f}"
        )
        return "\n".join(rows)


def load_cases(path: str | Path) -> list[EvalCase]:
    """Cases file: JSON array of {question, gold_answer, category?}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        EvalCase(
            question=entry["question"],
            gold_answer=entry["gold_answer"],
            category=entry.get("category"),
        )
        for entry in data
    ]


def gateway_judge(provider: LLMGateway, template_path: str | Path) -> JudgeFn:
    """Build a judge hook from a provider plus an external prompt template.

    The template must contain {question}, {gold_answer} and {answer}
    placeholders; the model is expected to reply with a number in [0, 1].
    """
    template = Path(template_path).read_text(encoding="utf-8")

    def judge(question: str, gold_answer: str, answer: str) -> float:
        request = ChatRequest(
            role_tag=RoleTag.JUDGE,
            system_prompt="You are a strict grader. Reply with a single number between 0 and 1.",
            user_prompt=template.format(question=question, gold_answer=gold_answer, answer=answer),
        )
        reply = provider.chat(request).strip()
        try:
            return min(1.0, max(0.0, float(reply.split()[0])))
        except (ValueError, IndexError):
            return 0.0

    return judge


def run_eval(
    cases: list[EvalCase],
    engine: MemoryEngine,
    user_id: str,
    *,
    top_k: int | None = None,
    answer_provider: LLMGateway | None = None,
    judge: JudgeFn | None = None,
) -> EvalReport:
    """Answer and score every case; a failing case scores 0 and the run goes on."""
    report = EvalReport()
    for case in cases:
        category = case.category or UNCATEGORIZED
        started = time.perf_counter()
        try:
            answer, _context = engine.answer(
                user_id, case.question, k=top_k, answer_provider=answer_provider
            )
        except Exception as exc:
            report.results.append(
                CaseResult(
                    question=case.question,
                    gold_answer=case.gold_answer,
                    answer="",
                    category=category,
                    f1=0.0,
                    bleu1=0.0,
                    error=str(exc),
                    answer_seconds=time.perf_counter() - started,
                )
            )
            continue
        result = CaseResult(
            question=case.question,
            gold_answer=case.gold_answer,
            answer=answer,
            category=category,
            f1=token_f1(answer, case.gold_answer),
            bleu1=bleu1(answer, case.gold_answer),
            answer_seconds=time.perf_counter() - started,
        )
        if judge is not None:
            result.judge = judge(case.question, case.gold_answer, answer)
        report.results.append(result)
    return report
