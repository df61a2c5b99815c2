"""The iterative distillation loop and its evaluation harness.

Each epoch t (the imitation index advances per epoch) every minibatch is
processed as: forward the student p on the batch, build the teacher q by
projecting p onto the rule set, extract q's per-instance soft predictions,
and take one mixed-loss gradient step where the SAME instances feed the
hard-label and the imitation term.

Teacher construction is routed by rule scope: per-instance rules become
single-position projections, bigram rules become chain potentials, and
cross-instance rules become Gibbs groups over the linked sites whose
marginals then enter the per-sentence chains as extra unary penalties.
That last composition keeps hard transition constraints out of the
sampler (see the inference module note on ergodicity) while still letting
list information flow into every decoded sequence.

Modes: plain supervised (base), distillation, semi-supervised
distillation (imitation term additionally on unlabeled batches),
evaluation-time-only projection, and a two-stage pipeline that trains a
fresh student against a frozen projected teacher.  A distillation run
with C = 0 or an empty rule set takes the base code path outright, so its
parameter trajectory is bit-identical to a base run with the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .corpus import LabeledSentence, TaggedSentence, detect_lists, group_documents
from .inference import (
    ChainTeacherQuery,
    GroupLink,
    MemberPotentials,
    chain_map_decode,
    chain_marginals,
    form_groups,
    gibbs_soft_predict,
)
from .predictors import (
    Adadelta,
    MixedTarget,
    SequenceTagger,
    TextClassifier,
    Vocabulary,
    backward_and_step,
)
from .projection import (
    InfeasibleConstraintError,
    ProjectionProblem,
    project,
)
from .rulelib import (
    CategoryCollapse,
    Rule,
    TagScheme,
    detect_but,
    list_rule_truth,
    transition_masks,
)

__all__ = [
    "ImitationSchedule",
    "CLASSIFICATION_SCHEDULE",
    "TAGGING_SCHEDULE",
    "imitation_rate",
    "TrainConfig",
    "EvalReport",
    "aggregate_reports",
    "TrainResult",
    "SentimentTeacher",
    "NerTeacher",
    "train_distill",
    "train_semi",
    "project_after",
    "pipeline_distill",
    "evaluate",
]


# --- imitation schedule ------------------------------------------------------


@dataclass(frozen=True)
class ImitationSchedule:
    """pi(t) = min(pi0, 1 - alpha^t): 0 at t=0, non-decreasing, capped."""

    pi0: float
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.pi0 <= 1.0:
            raise ValueError("pi0 must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    def rate(self, t: int) -> float:
        if t < 0:
            raise ValueError("iteration index must be >= 0")
        return min(self.pi0, 1.0 - self.alpha**t)


CLASSIFICATION_SCHEDULE = ImitationSchedule(pi0=1.0, alpha=0.95)
TAGGING_SCHEDULE = ImitationSchedule(pi0=0.9, alpha=0.9)


def imitation_rate(schedule: ImitationSchedule, t: int) -> float:
    return schedule.rate(t)


# --- configuration -----------------------------------------------------------

_MODES = ("base", "distill", "semi", "project-after", "pipeline")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "sentiment"  # "sentiment" | "ner"
    mode: str = "distill"
    c: float = 6.0
    schedule: Optional[ImitationSchedule] = None  # task default when None
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    g_max: int = 8
    train_sweeps: int = 200
    eval_sweeps: int = 2000
    patience: int = 5
    emb_dim: int = 32
    n_filters: int = 16
    conv_windows: tuple[int, ...] = (2, 3)
    hidden: int = 32
    radius: int = 2
    positive_class: int = 1

    def __post_init__(self):
        if self.task not in ("sentiment", "ner"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def resolved_schedule(self) -> ImitationSchedule:
        if self.schedule is not None:
            return self.schedule
        return CLASSIFICATION_SCHEDULE if self.task == "sentiment" else TAGGING_SCHEDULE


# --- evaluation report -------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Metrics for one model on one dataset.  Classification reports
    accuracy; tagging reports exact-span micro P/R/F1 plus the fraction of
    BIOES-valid decoded sequences."""

    task: str
    n: int
    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    validity_rate: Optional[float] = None

    def metric(self) -> float:
        return self.accuracy if self.task == "sentiment" else self.f1

    def as_dict(self) -> dict[str, float]:
        out = {"n": self.n}
        for key in ("accuracy", "precision", "recall", "f1", "validity_rate"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def aggregate_reports(reports: Sequence[EvalReport]) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, population stddev) across seeds."""
    if not reports:
        return {}
    out = {}
    for key in ("accuracy", "precision", "recall", "f1", "validity_rate"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if vals:
            arr = np.array(vals, dtype=float)
            out[key] = (float(arr.mean()), float(arr.std()))
    return out


def _micro_span_prf(gold_spans, pred_spans) -> tuple[float, float, float]:
    tp = fp = fn = 0
    for g, p in zip(gold_spans, pred_spans):
        gset, pset = set(g), set(p)
        tp += len(gset & pset)
        fp += len(pset - gset)
        fn += len(gset - pset)
    prec = tp / (tp + fp) if tp + fp else 1.0
    rec = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


# --- rule routing ------------------------------------------------------------


def _split_rules(rules: Sequence[Rule]):
    per_instance = [r for r in rules if r.scope == "per-instance"]
    bigram = [r for r in rules if r.scope == "bigram"]
    cross = [r for r in rules if r.scope == "cross-instance"]
    for r in cross:
        if r.hard:
            raise ValueError(
                f"rule {r.name!r}: cross-instance rules must have finite "
                "confidence (the sampler needs soft couplings)"
            )
    return per_instance, bigram, cross


# --- sentiment teacher -------------------------------------------------------


class SentimentTeacher:
    """Evaluation-time teacher for classification: projects the student's
    output through the per-instance rules.  Instances without an A-but-B
    structure are left at the student distribution."""

    def __init__(self, model, vocab: Vocabulary, rules: Sequence[Rule], c: float,
                 positive_class: int = 1):
        self.model = model
        self.vocab = vocab
        self.rules, _, _ = _split_rules(rules)
        self.c = float(c)
        self.positive_class = positive_class
        self._diagnostics = {"infeasible_instances": 0}

    def _clause_b_sigma(self, tokens) -> Optional[float]:
        st = detect_but(tokens)
        if st is None:
            return None
        sigma_b = self.model.forward(self.vocab.encode(st.clause_b))
        return float(sigma_b[self.positive_class])

    def predict_proba(self, tokens) -> np.ndarray:
        sigma = self.model.forward(self.vocab.encode(tokens))
        if not self.rules:
            return sigma
        payload = [self._clause_b_sigma(tokens)]
        groundings = []
        for rule in self.rules:
            for g in rule.groundings(payload):
                groundings.append((rule.confidence, g.table))
        if not groundings:
            return sigma
        try:
            post = project(
                ProjectionProblem(np.log(sigma), tuple(groundings), self.c)
            )
        except InfeasibleConstraintError:
            self._diagnostics["infeasible_instances"] += 1
            return sigma
        return post.probs()

    def predict_label(self, tokens) -> int:
        return int(np.argmax(self.predict_proba(tokens)))


# --- NER teacher -------------------------------------------------------------


def _transition_log_terms(scheme: TagScheme, confidence: float, c: float):
    """Chain potentials for the BIOES transition rules: 0 where valid,
    -c*confidence (or -inf when hard) where invalid."""
    masks = transition_masks(scheme)
    bad = -math.inf if math.isinf(confidence) else -c * confidence
    pair = np.where(masks.valid_pair, 0.0, bad)
    start = np.where(masks.valid_start, 0.0, bad)
    end = np.where(masks.valid_end, 0.0, bad)
    return pair, start, end


def _doc_links(doc_tokens: Sequence[Sequence[str]]):
    """Counterpart site pairs ((sent, pos), (sent, pos)) from detected
    lists, linking the first tokens of positionally aligned blocks."""
    links = []
    for group in detect_lists(doc_tokens):
        items = group.items
        for (ia, k), (ib, _) in group.counterpart_pairs():
            a = (items[ia].sent_index, items[ia].blocks[k][0])
            b = (items[ib].sent_index, items[ib].blocks[k][0])
            if a != b:
                links.append((a, b))
    return links


class _NerTeacherPass:
    """Shared teacher construction for the NER task.

    Stage 1: Gibbs over the cross-linked sites (unaries from the student)
    yields site marginals.  Stage 2: per-sentence chains with transition
    potentials plus, at linked sites, unary penalties measuring the list
    rule against the counterparts' stage-1 marginals.
    """

    def __init__(self, scheme: TagScheme, rules: Sequence[Rule], c: float,
                 sweeps: int, g_max: int):
        _, self.bigram, self.cross = _split_rules(rules)
        self.scheme = scheme
        self.collapse = CategoryCollapse(scheme)
        self.c = float(c)
        self.sweeps = sweeps
        self.g_max = g_max
        if self.bigram:
            conf = self.bigram[0].confidence
            self.chain_terms = _transition_log_terms(scheme, conf, self.c)
        else:
            self.chain_terms = None

    def _site_marginals(self, log_sigmas, site_links, seed: int):
        """Gibbs marginals for every linked site; {} when no cross rule."""
        if not self.cross or not site_links or self.c == 0.0:
            return {}
        sites = sorted({s for pair in site_links for s in pair})
        index = {s: i for i, s in enumerate(sites)}
        members = [
            MemberPotentials(log_unary=log_sigmas[s][t : t + 1]) for s, t in sites
        ]
        glinks = []
        for rule in self.cross:
            for g in rule.groundings(site_links):
                a, b = g.sites
                glinks.append(
                    GroupLink(
                        member_a=index[a],
                        pos_a=0,
                        member_b=index[b],
                        pos_b=0,
                        log_table=-self.c * rule.confidence * (1.0 - g.table),
                    )
                )
        out = {}
        for query in form_groups(
            members, glinks, g_max=self.g_max, seed=seed, sweeps=self.sweeps
        ):
            for marg, mid in zip(gibbs_soft_predict(query), query.member_ids):
                out[sites[mid]] = marg[0]
        return out

    def _list_penalties(self, site_links, marginals):
        """Per-site unary penalty vectors from counterpart marginals."""
        pens: dict[tuple[int, int], np.ndarray] = {}
        if not marginals:
            return pens
        k = self.scheme.n_tags
        lam = self.cross[0].confidence
        for a, b in site_links:
            for site, other in ((a, b), (b, a)):
                mu = marginals.get(other)
                if mu is None:
                    continue
                truths = np.array(
                    [
                        float(list_rule_truth(self.collapse, tag, mu))
                        for tag in self.scheme.tags
                    ]
                )
                pens.setdefault(site, np.zeros(k))
                pens[site] += self.c * lam * (1.0 - truths)
        return pens

    def run(self, log_sigmas: Sequence[np.ndarray], site_links, seed: int):
        """Per-sentence (marginals, decoded path) under the full teacher."""
        marginals = self._site_marginals(log_sigmas, site_links, seed)
        pens = self._list_penalties(site_links, marginals)
        results = []
        for s_idx, log_sigma in enumerate(log_sigmas):
            log_unary = log_sigma.copy()
            for (site_s, site_t), pen in pens.items():
                if site_s == s_idx:
                    log_unary[site_t] -= pen
            if self.chain_terms is not None:
                pair, start, end = self.chain_terms
                query = ChainTeacherQuery(
                    log_unary=log_unary, log_pair=pair, log_start=start, log_end=end
                )
            else:
                query = ChainTeacherQuery(log_unary=log_unary)
            results.append((chain_marginals(query), chain_map_decode(query)[0]))
        return results


class NerTeacher:
    """Evaluation-time teacher for tagging: decodes each document through
    the chain+group teacher built from the student's probabilities.
    Counterpart links come from the evaluated document itself."""

    def __init__(self, model, vocab: Vocabulary, scheme: TagScheme,
                 rules: Sequence[Rule], c: float, sweeps: int = 2000,
                 g_max: int = 8, seed: int = 0):
        self.model = model
        self.vocab = vocab
        self.scheme = scheme
        self.seed = seed
        self._pass = _NerTeacherPass(scheme, rules, c, sweeps, g_max)

    def decode_doc(self, doc_tokens: Sequence[Sequence[str]], doc_seed: int = 0):
        log_sigmas = [
            np.log(self.model.forward(self.vocab.encode(toks)))
            for toks in doc_tokens
        ]
        links = _doc_links(doc_tokens)
        results = self._pass.run(log_sigmas, links, seed=doc_seed)
        return [
            [self.scheme.tags[k] for k in path] for _, path in results
        ]

    def predict_tags(self, docs: Sequence[Sequence[TaggedSentence]]):
        out = []
        for d_idx, doc in enumerate(docs):
            tokens = [s.tokens for s in doc]
            # Per-document seed keeps repeat evaluations identical.
            out.append(self.decode_doc(tokens, doc_seed=self.seed + 7919 * d_idx))
        return out


# --- generic evaluation ------------------------------------------------------


def _predict_sentiment_labels(predictor, vocab, dataset):
    labels = []
    for s in dataset:
        if isinstance(predictor, SentimentTeacher):
            labels.append(predictor.predict_label(s.tokens))
        else:
            labels.append(int(np.argmax(predictor.forward(vocab.encode(s.tokens)))))
    return labels


def evaluate(predictor, dataset, task: Optional[str] = None,
             vocab: Optional[Vocabulary] = None,
             scheme: Optional[TagScheme] = None) -> EvalReport:
    """Score a student model or teacher evaluator on a dataset.

    Students need ``vocab`` (and ``scheme`` for tagging); teachers carry
    their own.  The task is inferred from the record type when omitted.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty evaluation dataset")
    if task is None:
        task = "sentiment" if isinstance(dataset[0], LabeledSentence) else "ner"

    if task == "sentiment":
        if isinstance(predictor, SentimentTeacher):
            vocab = predictor.vocab
        if vocab is None:
            raise ValueError("student evaluation needs a vocabulary")
        labels = _predict_sentiment_labels(predictor, vocab, dataset)
        acc = float(np.mean([p == s.label for p, s in zip(labels, dataset)]))
        return EvalReport(task="sentiment", n=len(dataset), accuracy=acc)

    docs = group_documents(dataset)
    if isinstance(predictor, NerTeacher):
        scheme = predictor.scheme
        pred_docs = predictor.predict_tags(docs)
    else:
        if vocab is None or scheme is None:
            raise ValueError("student tagging evaluation needs vocab and scheme")
        pred_docs = []
        for doc in docs:
            pred_docs.append(
                [
                    [scheme.tags[k] for k in
                     np.argmax(predictor.forward(vocab.encode(s.tokens)), axis=1)]
                    for s in doc
                ]
            )
    gold_spans, pred_spans, valid = [], [], []
    for doc, preds in zip(docs, pred_docs):
        for sent, ptags in zip(doc, preds):
            gold_spans.append(scheme.spans(sent.tags))
            pred_spans.append(scheme.spans(ptags))
            valid.append(scheme.valid_sequence(ptags))
    prec, rec, f1 = _micro_span_prf(gold_spans, pred_spans)
    return EvalReport(
        task="ner",
        n=len(dataset),
        precision=prec,
        recall=rec,
        f1=f1,
        validity_rate=float(np.mean(valid)),
    )


# --- training ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainResult:
    student: object
    teacher: Optional[object]
    vocab: Vocabulary
    scheme: Optional[TagScheme]
    history: tuple[dict, ...]
    diagnostics: dict


def _one_hot(k: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v


class _SentimentDriver:
    """Task plumbing for classification: encoding, teacher targets, batching."""

    def __init__(self, config: TrainConfig, train, unlabeled=()):
        self.config = config
        self.train = list(train)
        self.unlabeled = list(unlabeled)
        self.n_classes = max(2, max(s.label for s in self.train) + 1)
        self.vocab = Vocabulary.build(
            [s.tokens for s in self.train] + [s.tokens for s in self.unlabeled]
        )
        self.ids = [self.vocab.encode(s.tokens) for s in self.train]
        self.u_ids = [self.vocab.encode(s.tokens) for s in self.unlabeled]
        self.clause_b = [self._clause(s.tokens) for s in self.train]
        self.u_clause_b = [self._clause(s.tokens) for s in self.unlabeled]
        self.hard = [_one_hot(s.label, self.n_classes) for s in self.train]

    def _clause(self, tokens):
        st = detect_but(tokens)
        return None if st is None else self.vocab.encode(st.clause_b)

    def init_model(self):
        cfg = self.config
        return TextClassifier(
            len(self.vocab),
            self.n_classes,
            emb_dim=cfg.emb_dim,
            window_sizes=cfg.conv_windows,
            n_filters=cfg.n_filters,
            seed=cfg.seed,
        )

    def soft_targets(self, model, rules, idxs, unlabeled=False, diagnostics=None):
        """Teacher distributions for the indexed instances."""
        per_instance, _, _ = _split_rules(rules)
        ids = self.u_ids if unlabeled else self.ids
        clauses = self.u_clause_b if unlabeled else self.clause_b
        out = []
        for i in idxs:
            sigma = model.forward(ids[i])
            clause = clauses[i]
            groundings = []
            if clause is not None:
                payload = [float(model.forward(clause)[self.config.positive_class])]
                for rule in per_instance:
                    for g in rule.groundings(payload):
                        groundings.append((rule.confidence, g.table))
            if groundings:
                try:
                    sigma = project(
                        ProjectionProblem(
                            np.log(sigma), tuple(groundings), self.config.c
                        )
                    ).probs()
                except InfeasibleConstraintError:
                    if diagnostics is not None:
                        diagnostics["infeasible_instances"] += 1
            out.append(sigma)
        return out

    def batch(self, idxs):
        return [(self.ids[i], i) for i in idxs]

    def make_teacher(self, model, rules):
        return SentimentTeacher(
            model, self.vocab, rules, self.config.c, self.config.positive_class
        )


class _NerDriver:
    """Task plumbing for tagging: documents, link detection, teacher pass."""

    def __init__(self, config: TrainConfig, train, unlabeled=()):
        self.config = config
        self.docs = group_documents(list(train))
        self.u_docs = group_documents(list(unlabeled)) if unlabeled else []
        cats = sorted(
            {
                t.split("-", 1)[1]
                for doc in self.docs + self.u_docs
                for s in doc
                for t in s.tags
                if t != "O"
            }
        )
        self.scheme = TagScheme(tuple(cats))
        all_sents = [s for doc in self.docs + self.u_docs for s in doc]
        self.vocab = Vocabulary.build([s.tokens for s in all_sents])
        self.doc_data = [self._prep_doc(doc) for doc in self.docs]
        self.u_doc_data = [self._prep_doc(doc) for doc in self.u_docs]

    def _prep_doc(self, doc):
        ids = [self.vocab.encode(s.tokens) for s in doc]
        hard = [
            np.stack([_one_hot(self.scheme.index(t), self.scheme.n_tags) for t in s.tags])
            for s in doc
        ]
        links = _doc_links([s.tokens for s in doc])
        return {"ids": ids, "hard": hard, "links": links}

    def init_model(self):
        cfg = self.config
        return SequenceTagger(
            len(self.vocab),
            self.scheme.n_tags,
            emb_dim=cfg.emb_dim,
            hidden=cfg.hidden,
            radius=cfg.radius,
            seed=cfg.seed,
        )

    def teacher_pass(self, rules, sweeps):
        return _NerTeacherPass(
            self.scheme, rules, self.config.c, sweeps, self.config.g_max
        )

    def soft_targets(self, model, tpass, doc_idx, seed, unlabeled=False):
        data = (self.u_doc_data if unlabeled else self.doc_data)[doc_idx]
        log_sigmas = [np.log(model.forward(ids)) for ids in data["ids"]]
        results = tpass.run(log_sigmas, data["links"], seed=seed)
        return [marg for marg, _ in results]

    def make_teacher(self, model, rules):
        cfg = self.config
        return NerTeacher(
            model,
            self.vocab,
            self.scheme,
            rules,
            cfg.c,
            sweeps=cfg.eval_sweeps,
            g_max=cfg.g_max,
            seed=cfg.seed,
        )


def _dev_metric(model, driver, dev):
    if dev is None:
        return None
    if isinstance(driver, _SentimentDriver):
        return evaluate(model, dev, task="sentiment", vocab=driver.vocab).metric()
    return evaluate(
        model, dev, task="ner", vocab=driver.vocab, scheme=driver.scheme
    ).metric()


def _snapshot(model):
    return {k: v.copy() for k, v in model.params.items()}


def _restore(model, snap):
    for k, v in snap.items():
        model.params[k] = v.copy()


class _EarlyStopper:
    """Keep the best-dev parameters; stop after `patience` stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_params = None
        self.stale = 0

    def update(self, metric, model) -> bool:
        if metric is None:
            return False
        if metric > self.best + 1e-12:
            self.best = metric
            self.best_params = _snapshot(model)
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience

    def finalize(self, model):
        if self.best_params is not None:
            _restore(model, self.best_params)


def _train_sentiment(config, driver: _SentimentDriver, rules, dev, semi: bool):
    model = driver.init_model()
    opt = Adadelta()
    schedule = config.resolved_schedule()
    shuffle_rng = np.random.default_rng((config.seed, 1))
    distill = bool(rules) and config.c > 0.0
    diagnostics = {"infeasible_instances": 0, "clamped": 0}
    stopper = _EarlyStopper(config.patience)
    history = []

    n = len(driver.train)
    n_u = len(driver.unlabeled) if semi else 0
    for epoch in range(config.epochs):
        pi = schedule.rate(epoch) if distill else 0.0
        order = shuffle_rng.permutation(n)
        plan = [("L", order[i : i + config.batch_size])
                for i in range(0, n, config.batch_size)]
        if semi and n_u and distill and pi > 0.0:
            u_order = shuffle_rng.permutation(n_u)
            plan += [("U", u_order[i : i + config.batch_size])
                     for i in range(0, n_u, config.batch_size)]
            shuffle_rng.shuffle(plan)
        losses = []
        for kind, idxs in plan:
            if kind == "L":
                if distill and pi > 0.0:
                    soft = driver.soft_targets(
                        model, rules, idxs, diagnostics=diagnostics
                    )
                    batch = [
                        (driver.ids[i],
                         MixedTarget(hard=driver.hard[i], soft=s, pi=pi))
                        for i, s in zip(idxs, soft)
                    ]
                else:
                    batch = [
                        (driver.ids[i], MixedTarget(hard=driver.hard[i]))
                        for i in idxs
                    ]
                losses.append(backward_and_step(model, batch, opt))
            else:
                # Imitation-only term on unlabeled data, weighted by pi.
                soft = driver.soft_targets(
                    model, rules, idxs, unlabeled=True, diagnostics=diagnostics
                )
                batch = [
                    (driver.u_ids[i], MixedTarget(hard=s))
                    for i, s in zip(idxs, soft)
                ]
                losses.append(backward_and_step(model, batch, opt, loss_scale=pi))
        metric = _dev_metric(model, driver, dev)
        history.append(
            {"epoch": epoch, "pi": pi, "train_loss": float(np.mean(losses)),
             **({"dev_metric": metric} if metric is not None else {})}
        )
        if stopper.update(metric, model):
            break
    stopper.finalize(model)
    return model, history, diagnostics


def _doc_batches(order, doc_data, batch_size):
    """Group shuffled doc indices into batches of about batch_size sentences.
    Documents stay intact so every teacher group is built in full."""
    batches, cur, count = [], [], 0
    for d in order:
        nd = len(doc_data[int(d)]["ids"])
        if cur and count + nd > batch_size:
            batches.append(cur)
            cur, count = [], 0
        cur.append(int(d))
        count += nd
    if cur:
        batches.append(cur)
    return batches


def _train_ner(config, driver: _NerDriver, rules, dev, semi: bool):
    model = driver.init_model()
    opt = Adadelta()
    schedule = config.resolved_schedule()
    shuffle_rng = np.random.default_rng((config.seed, 1))
    gibbs_rng = np.random.default_rng((config.seed, 2))
    distill = bool(rules) and config.c > 0.0
    tpass = driver.teacher_pass(rules, config.train_sweeps) if distill else None
    diagnostics = {"infeasible_instances": 0, "clamped": 0}
    stopper = _EarlyStopper(config.patience)
    history = []

    n = len(driver.docs)
    n_u = len(driver.u_docs) if semi else 0
    for epoch in range(config.epochs):
        pi = schedule.rate(epoch) if distill else 0.0
        plan = [
            ("L", docs)
            for docs in _doc_batches(
                shuffle_rng.permutation(n), driver.doc_data, config.batch_size
            )
        ]
        if semi and n_u and distill and pi > 0.0:
            plan += [
                ("U", docs)
                for docs in _doc_batches(
                    shuffle_rng.permutation(n_u), driver.u_doc_data, config.batch_size
                )
            ]
            shuffle_rng.shuffle(plan)
        losses = []
        for kind, doc_idxs in plan:
            all_data = driver.doc_data if kind == "L" else driver.u_doc_data
            batch = []
            for d in doc_idxs:
                data = all_data[d]
                if distill and pi > 0.0:
                    seed = int(gibbs_rng.integers(2**31 - 1))
                    soft = driver.soft_targets(
                        model, tpass, d, seed=seed, unlabeled=(kind == "U")
                    )
                else:
                    soft = None
                if kind == "L":
                    if soft is not None:
                        batch += [
                            (ids, MixedTarget(hard=h, soft=s, pi=pi))
                            for ids, h, s in zip(data["ids"], data["hard"], soft)
                        ]
                    else:
                        batch += [
                            (ids, MixedTarget(hard=h))
                            for ids, h in zip(data["ids"], data["hard"])
                        ]
                else:
                    batch += [
                        (ids, MixedTarget(hard=s))
                        for ids, s in zip(data["ids"], soft)
                    ]
            scale = pi if kind == "U" else 1.0
            losses.append(backward_and_step(model, batch, opt, loss_scale=scale))
        metric = _dev_metric(model, driver, dev)
        history.append(
            {"epoch": epoch, "pi": pi, "train_loss": float(np.mean(losses)),
             **({"dev_metric": metric} if metric is not None else {})}
        )
        if stopper.update(metric, model):
            break
    stopper.finalize(model)
    return model, history, diagnostics


def _make_driver(config, train, unlabeled=()):
    if config.task == "sentiment":
        return _SentimentDriver(config, train, unlabeled)
    return _NerDriver(config, train, unlabeled)


def train_distill(config: TrainConfig, train, rules: Sequence[Rule] = (),
                  dev=None) -> TrainResult:
    """Supervised distillation (Algorithm-style loop).  With C = 0 or no
    rules this takes the plain supervised path, bit-identical to base mode."""
    driver = _make_driver(config, train)
    if config.task == "sentiment":
        model, history, diag = _train_sentiment(config, driver, list(rules), dev, semi=False)
    else:
        model, history, diag = _train_ner(config, driver, list(rules), dev, semi=False)
    teacher = driver.make_teacher(model, list(rules)) if rules else None
    return TrainResult(
        student=model,
        teacher=teacher,
        vocab=driver.vocab,
        scheme=getattr(driver, "scheme", None),
        history=tuple(history),
        diagnostics=diag,
    )


def train_semi(config: TrainConfig, train, unlabeled, rules: Sequence[Rule],
               dev=None) -> TrainResult:
    """Distillation with the imitation term additionally on unlabeled data.
    Unlabeled batches never contribute a hard-label term."""
    driver = _make_driver(config, train, unlabeled)
    if config.task == "sentiment":
        model, history, diag = _train_sentiment(config, driver, list(rules), dev, semi=True)
    else:
        model, history, diag = _train_ner(config, driver, list(rules), dev, semi=True)
    teacher = driver.make_teacher(model, list(rules)) if rules else None
    return TrainResult(
        student=model,
        teacher=teacher,
        vocab=driver.vocab,
        scheme=getattr(driver, "scheme", None),
        history=tuple(history),
        diagnostics=diag,
    )


def project_after(model, vocab: Vocabulary, rules: Sequence[Rule], c: float,
                  task: str, scheme: Optional[TagScheme] = None,
                  eval_sweeps: int = 2000, g_max: int = 8, seed: int = 0):
    """Evaluation-time-only projection of a trained model; no weight change."""
    if task == "sentiment":
        return SentimentTeacher(model, vocab, rules, c)
    if scheme is None:
        raise ValueError("tagging projection needs a tag scheme")
    return NerTeacher(model, vocab, scheme, rules, c,
                      sweeps=eval_sweeps, g_max=g_max, seed=seed)


def pipeline_distill(config: TrainConfig, train, rules: Sequence[Rule],
                     dev=None) -> TrainResult:
    """Two-stage pipeline: train a base model, freeze and project it, then
    train a FRESH student purely on the projected soft targets (pi = 1)."""
    stage1 = train_distill(replace(config, mode="base"), train, rules=(), dev=dev)
    frozen = stage1.student
    driver = _make_driver(config, train)
    rules = list(rules)

    # Teacher targets from the frozen model are static: compute them once.
    if config.task == "sentiment":
        idxs = list(range(len(driver.train)))
        soft = driver.soft_targets(frozen, rules, idxs)
        static = [
            (driver.ids[i], MixedTarget(hard=s, soft=s, pi=1.0))
            for i, s in zip(idxs, soft)
        ]
    else:
        tpass = driver.teacher_pass(rules, config.eval_sweeps)
        static = []
        gibbs_rng = np.random.default_rng((config.seed, 3))
        for d, data in enumerate(driver.doc_data):
            soft = driver.soft_targets(
                frozen, tpass, d, seed=int(gibbs_rng.integers(2**31 - 1))
            )
            static += [
                (ids, MixedTarget(hard=s, soft=s, pi=1.0))
                for ids, s in zip(data["ids"], soft)
            ]

    student_cfg = replace(config, seed=config.seed + 1)
    student_driver = _make_driver(student_cfg, train)
    student = student_driver.init_model()
    opt = Adadelta()
    shuffle_rng = np.random.default_rng((config.seed, 4))
    history = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(static))
        losses = []
        for i in range(0, len(order), config.batch_size):
            batch = [static[j] for j in order[i : i + config.batch_size]]
            losses.append(backward_and_step(student, batch, opt))
        history.append(
            {"epoch": epoch, "pi": 1.0, "train_loss": float(np.mean(losses))}
        )
    teacher = driver.make_teacher(frozen, rules)
    return TrainResult(
        student=student,
        teacher=teacher,
        vocab=driver.vocab,
        scheme=getattr(driver, "scheme", None),
        history=tuple(history),
        diagnostics={"stage1_epochs": len(stage1.history)},
    )
