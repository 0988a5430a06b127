//! Action-conditioned decoder: the full Push/Pop sequence with buffer and
//! cache indices first, then English words with a pointer that moves
//! forward through the pushed concepts and attends to the current one.

use crate::amr::{AmrGraph, ConceptId};
use crate::corpus::reserved::{BOS_ID, EOS_ID, POP_ID, PUSH_ID};
use crate::decode::{argmax, cut, output_mask, top_n, total, Accuracy, DecodeError, GenerateOptions, Generated, Prepared};
use crate::encoder::{encode_graph, EncodedGraph};
use crate::model::{ConditionedParams, Net};
use crate::neural::{lstm_step, LstmState, NeuralError, Tape, Var};
use crate::transition::{init_config, Action, ActionKind, CacheSlot, ParserConfiguration, System};

struct Ctx<'a> {
    net: &'a Net,
    p: &'a ConditionedParams,
    enc: EncodedGraph,
    null: Var,
}

impl Ctx<'_> {
    fn slot(&self, s: CacheSlot) -> Var {
        s.concept().map_or(self.null, |c| self.enc.h[c.index()])
    }

    /// One action-recurrence step: context, LSTM update and the Push/Pop
    /// logits (index 0 is Push).
    fn action_step(
        &self,
        tape: &mut Tape,
        cfg: &ParserConfiguration,
        state: LstmState,
        prev: usize,
    ) -> Result<(LstmState, Var), NeuralError> {
        let top = cfg.stack_top().map_or(self.null, |(_, s)| self.slot(s));
        let right = self.slot(cfg.rightmost());
        let c = tape.concat_affine(self.p.act_ctx.w, self.p.act_ctx.b, &[top, right, state.hidden])?;
        let e = tape.row(self.net.word_emb, prev)?;
        let x = tape.concat_affine(self.p.act_in.w, self.p.act_in.b, &[e, c])?;
        let next = lstm_step(tape, &self.p.act_lstm, state, x)?;
        let logits = tape.concat_affine(self.p.act_out.w, self.p.act_out.b, &[next.cell, c])?;
        Ok((next, logits))
    }

    fn buffer_logits(&self, tape: &mut Tape, cfg: &ParserConfiguration, s: Var) -> Result<Var, NeuralError> {
        let rows: Vec<Var> = cfg.buffer().iter().map(|c| self.enc.h[c.index()]).collect();
        let u = tape.matvec(self.p.u_beta, s)?;
        tape.dots(&rows, u)
    }

    fn cache_logits(&self, tape: &mut Tape, cfg: &ParserConfiguration, s: Var) -> Result<Var, NeuralError> {
        let rows: Vec<Var> = cfg.cache().iter().map(|&slot| self.slot(slot)).collect();
        let u = tape.matvec(self.p.u_eta, s)?;
        tape.dots(&rows, u)
    }

    /// Pointer logits over the current concept (index 0) and every later
    /// one in push order; choosing index `m > 0` moves the pointer `m`
    /// places, past concepts that realize no words.
    fn pointer_logits(&self, tape: &mut Tape, rows: &[ConceptId], s: Var) -> Result<Var, NeuralError> {
        let rows: Vec<Var> = rows.iter().map(|c| self.enc.h[c.index()]).collect();
        let u = tape.matvec(self.p.u_r, s)?;
        tape.dots(&rows, u)
    }

    /// One English-recurrence step attending to `concept`.
    fn word_step(
        &self,
        tape: &mut Tape,
        concept: Option<ConceptId>,
        state: LstmState,
        prev: usize,
    ) -> Result<(LstmState, Var), NeuralError> {
        let h = concept.map_or(self.null, |c| self.enc.h[c.index()]);
        let c = tape.affine(self.p.eng_ctx.w, self.p.eng_ctx.b, h)?;
        let e = tape.row(self.net.word_emb, prev)?;
        let x = tape.concat_affine(self.p.eng_in.w, self.p.eng_in.b, &[e, c])?;
        let next = lstm_step(tape, &self.p.eng_lstm, state, x)?;
        let logits = tape.concat_affine(self.p.eng_out.w, self.p.eng_out.b, &[next.cell, c])?;
        Ok((next, logits))
    }
}

/// Decoding starts from the buffer in concept-id order; Push picks any
/// buffer element by position.
pub(crate) fn start(net: &Net, g: &AmrGraph) -> Result<ParserConfiguration, DecodeError> {
    let ids: Vec<ConceptId> = g.concept_ids().collect();
    Ok(init_config(g, &ids, net.config.k, System::Simplified)?)
}

pub(crate) fn action_mask(cfg: &ParserConfiguration) -> [bool; 2] {
    [!cfg.buffer().is_empty(), !cfg.stack().is_empty()]
}

/// `L_c`: cross-entropy over actions, buffer and cache indices at each
/// Push, words and pointer increments, all teacher-forced.
pub fn loss(tape: &mut Tape, net: &Net, p: &ConditionedParams, ex: &Prepared) -> Result<(Var, Accuracy), DecodeError> {
    let enc = encode_graph(tape, net, &ex.graph)?;
    let null = tape.param(net.null);
    let ctx = Ctx { net, p, enc, null };
    let t = &ex.trace;
    let mut acc = Accuracy::default();
    let mut terms = Vec::new();

    let mut cfg = start(net, &ex.graph)?;
    let mut state = LstmState::zeros(tape, net.config.hidden);
    let mut prev = BOS_ID;
    let mut pushed = t.buffer_order.iter();
    for action in &t.actions {
        let (next, logits) = ctx.action_step(tape, &cfg, state, prev)?;
        state = next;
        let mask = action_mask(&cfg);
        let target = match action.kind() {
            Some(ActionKind::Push) => 0,
            _ => 1,
        };
        terms.push(tape.xent(logits, target, Some(&mask))?);
        acc.a.record(argmax(&tape.log_softmax(logits, Some(&mask))) == target);
        match action {
            Action::Push(index) => {
                let v = pushed.next().expect("one buffer entry per push");
                let pos = cfg.buffer().iter().position(|c| c == v).expect("gold concept in buffer");
                let lb = ctx.buffer_logits(tape, &cfg, state.hidden)?;
                terms.push(tape.xent(lb, pos, None)?);
                acc.i_beta.record(argmax(tape.value(lb)) == pos);
                let lc = ctx.cache_logits(tape, &cfg, state.hidden)?;
                terms.push(tape.xent(lc, index - 1, None)?);
                acc.i_eta.record(argmax(tape.value(lc)) == index - 1);
                cfg = cfg.push_buffer_element(pos, *index)?;
                prev = PUSH_ID;
            }
            _ => {
                cfg.apply_in_place(&Action::Pop)?;
                prev = POP_ID;
            }
        }
    }

    // Position in push order of the concept owning each word.
    let order = &t.buffer_order;
    let owners: Vec<usize> = order
        .iter()
        .enumerate()
        .flat_map(|(q, c)| std::iter::repeat_n(q, t.spans[c.index()].len()))
        .collect();
    let words = t.words();
    let out_mask = output_mask(net.vocab.len(), EOS_ID);
    let mut state = LstmState::zeros(tape, net.config.hidden);
    let start = tape.param(p.r_start);
    let mut q = 0;
    let mut prev = BOS_ID;
    for j in 0..=words.len() {
        let next_q = owners.get(j).copied().unwrap_or(q);
        let rows = &order[q..];
        if rows.len() > 1 {
            let query = if j == 0 { start } else { state.hidden };
            let lr = ctx.pointer_logits(tape, rows, query)?;
            terms.push(tape.xent(lr, next_q - q, None)?);
            acc.r.record(argmax(tape.value(lr)) == next_q - q);
        }
        q = next_q;
        let (next, logits) = ctx.word_step(tape, order.get(q).copied(), state, prev)?;
        state = next;
        let target = match words.get(j) {
            Some(w) => net.vocab.id(w),
            None => EOS_ID,
        };
        terms.push(tape.xent(logits, target, Some(&out_mask))?);
        acc.w.record(argmax(&tape.log_softmax(logits, Some(&out_mask))) == target);
        prev = target;
    }
    Ok((total(tape, &terms)?, acc))
}

#[derive(Clone)]
struct ActionHyp {
    cfg: ParserConfiguration,
    state: LstmState,
    prev: usize,
    score: f64,
    actions: Vec<Action>,
    order: Vec<ConceptId>,
}

#[derive(Clone)]
struct WordHyp {
    state: LstmState,
    p: usize,
    prev: usize,
    score: f64,
    words: Vec<usize>,
}

/// Two-stage beam search: actions and indices first, then words from the
/// best action hypothesis.
pub fn generate(
    tape: &mut Tape,
    net: &Net,
    p: &ConditionedParams,
    g: &AmrGraph,
    opts: &GenerateOptions,
) -> Result<Generated, DecodeError> {
    let beam = opts.beam.max(1);
    let enc = encode_graph(tape, net, g)?;
    let null = tape.param(net.null);
    let ctx = Ctx { net, p, enc, null };

    let cfg = start(net, g)?;
    let mut hyps = vec![ActionHyp {
        cfg,
        state: LstmState::zeros(tape, net.config.hidden),
        prev: BOS_ID,
        score: 0.0,
        actions: Vec::new(),
        order: Vec::new(),
    }];
    while !hyps[0].cfg.is_terminal() {
        // Action sub-step.
        let mut cands = Vec::new();
        for h in &hyps {
            let (state, logits) = ctx.action_step(tape, &h.cfg, h.state, h.prev)?;
            let logp = tape.log_softmax(logits, Some(&action_mask(&h.cfg)));
            for (a, &lp) in logp.iter().enumerate() {
                if lp.is_finite() {
                    let mut next = h.clone();
                    next.state = state;
                    next.score += lp;
                    cands.push((next, a == 0));
                }
            }
        }
        let cands = cut(cands, beam, |c| c.0.score);

        // Buffer-index sub-step.
        let mut with_pos = Vec::new();
        for (h, push) in cands {
            if !push {
                with_pos.push((h, None));
                continue;
            }
            let lb = ctx.buffer_logits(tape, &h.cfg, h.state.hidden)?;
            let logp = tape.log_softmax(lb, None);
            for pos in top_n(&logp, beam) {
                let mut next = h.clone();
                next.score += logp[pos];
                with_pos.push((next, Some(pos)));
            }
        }
        let with_pos = cut(with_pos, beam, |c| c.0.score);

        // Cache-index sub-step.
        let mut next_hyps = Vec::new();
        for (h, pos) in with_pos {
            let Some(pos) = pos else {
                let mut next = h;
                next.cfg.apply_in_place(&Action::Pop)?;
                next.actions.push(Action::Pop);
                next.prev = POP_ID;
                next_hyps.push(next);
                continue;
            };
            let lc = ctx.cache_logits(tape, &h.cfg, h.state.hidden)?;
            let logp = tape.log_softmax(lc, None);
            for i in top_n(&logp, beam) {
                let mut next = h.clone();
                next.score += logp[i];
                next.order.push(h.cfg.buffer()[pos]);
                next.cfg = h.cfg.push_buffer_element(pos, i + 1)?;
                next.actions.push(Action::Push(i + 1));
                next.prev = PUSH_ID;
                next_hyps.push(next);
            }
        }
        hyps = cut(next_hyps, beam, |h| h.score);
        if hyps.is_empty() {
            return Err(DecodeError::NoCompleteHypothesis);
        }
    }
    let best = hyps.swap_remove(0);

    let pointer = best.order.clone();
    let out_mask = output_mask(net.vocab.len(), EOS_ID);
    let rescored = |h: &WordHyp| h.score + opts.len_reward * h.words.len() as f64;
    let mut active = vec![WordHyp {
        state: LstmState::zeros(tape, net.config.hidden),
        p: 0,
        prev: BOS_ID,
        score: 0.0,
        words: Vec::new(),
    }];
    let mut finished: Vec<WordHyp> = Vec::new();
    for j in 0..=opts.max_words {
        if active.is_empty() || finished.len() >= beam {
            break;
        }
        // Pointer sub-step.
        let mut cands = Vec::new();
        for h in &active {
            let rows = &pointer[h.p.min(pointer.len())..];
            if rows.len() <= 1 {
                cands.push(h.clone());
                continue;
            }
            let query = if j == 0 { tape.param(p.r_start) } else { h.state.hidden };
            let lr = ctx.pointer_logits(tape, rows, query)?;
            let logp = tape.log_softmax(lr, None);
            for m in top_n(&logp, beam) {
                let mut next = h.clone();
                next.p += m;
                next.score += logp[m];
                cands.push(next);
            }
        }
        let cands = cut(cands, beam, rescored);

        // Word sub-step.
        let mut next_cands = Vec::new();
        for h in cands {
            let (state, logits) = ctx.word_step(tape, pointer.get(h.p).copied(), h.state, h.prev)?;
            let logp = tape.log_softmax(logits, Some(&out_mask));
            for w in top_n(&logp, beam) {
                if w != EOS_ID && j == opts.max_words {
                    continue;
                }
                let mut next = h.clone();
                next.state = state;
                next.score += logp[w];
                next.prev = w;
                if w != EOS_ID {
                    next.words.push(w);
                }
                next_cands.push(next);
            }
        }
        active.clear();
        for h in cut(next_cands, beam, rescored) {
            if h.prev == EOS_ID {
                finished.push(h);
            } else {
                active.push(h);
            }
        }
    }
    let words = cut(finished, 1, rescored)
        .pop()
        .ok_or(DecodeError::NoCompleteHypothesis)?;
    Ok(Generated {
        words: words.words.iter().map(|&w| net.vocab.token(w).to_string()).collect(),
        actions: best.actions,
        order: best.order,
        spans: Vec::new(),
        log_prob: best.score + words.score,
    })
}
