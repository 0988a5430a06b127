//! Joint decoder: Push/Pop decisions interleaved with the English span of
//! each pushed concept, terminated by `</ph>`.

use crate::amr::{AmrGraph, ConceptId};
use crate::conditioned::{action_mask, start};
use crate::corpus::reserved::{BOS_ID, END_PHRASE_ID, POP_ID, PUSH_ID};
use crate::decode::{argmax, cut, output_mask, top_n, total, Accuracy, DecodeError, GenerateOptions, Generated, Prepared};
use crate::encoder::{encode_graph, EncodedGraph};
use crate::model::{JointParams, Net};
use crate::neural::{lstm_step, LstmState, NeuralError, Tape, Var};
use crate::transition::{Action, ActionKind, CacheSlot, ParserConfiguration};

struct Ctx<'a> {
    net: &'a Net,
    p: &'a JointParams,
    g: &'a AmrGraph,
    enc: EncodedGraph,
    null: Var,
    zero_edge: Var,
}

/// Recurrent state carried along the interleaved sequence.
#[derive(Clone, Copy)]
struct State {
    action: LstmState,
    english: LstmState,
    /// Hidden state of whichever recurrence produced the previous position.
    last: Var,
    /// Action hidden state at the most recent Push.
    push: Var,
    prev: usize,
}

impl Ctx<'_> {
    fn mean_or_null(&self, tape: &mut Tape, cs: &[ConceptId]) -> Result<Var, NeuralError> {
        if cs.is_empty() {
            return Ok(self.null);
        }
        let hs: Vec<Var> = cs.iter().map(|c| self.enc.h[c.index()]).collect();
        tape.mean(&hs)
    }

    fn action_step(&self, tape: &mut Tape, cfg: &ParserConfiguration, st: &State) -> Result<(State, Var), NeuralError> {
        let stack: Vec<ConceptId> = cfg.stack_members().collect();
        let cache: Vec<ConceptId> = cfg.cache_members().collect();
        let ms = self.mean_or_null(tape, &stack)?;
        let mc = self.mean_or_null(tape, &cache)?;
        let c = tape.concat_affine(self.p.act_ctx.w, self.p.act_ctx.b, &[ms, mc, st.last])?;
        let e = tape.row(self.net.word_emb, st.prev)?;
        let x = tape.concat_affine(self.p.act_in.w, self.p.act_in.b, &[e, c])?;
        let action = lstm_step(tape, &self.p.act_lstm, st.action, x)?;
        let logits = tape.concat_affine(self.p.act_out.w, self.p.act_out.b, &[action.cell, c])?;
        let next = State {
            action,
            last: action.hidden,
            ..*st
        };
        Ok((next, logits))
    }

    /// Sum of edge-label embeddings between `v` and `others`, split by
    /// direction and divided by `norm`.
    fn edge_blocks(&self, tape: &mut Tape, v: ConceptId, others: &[ConceptId], norm: f64) -> Result<[Var; 2], NeuralError> {
        let mut incoming = Vec::new();
        let mut outgoing = Vec::new();
        for (i, e) in self.g.edges().iter().enumerate() {
            if e.dst == v && others.contains(&e.src) {
                incoming.push(self.enc.edges[i]);
            }
            if e.src == v && others.contains(&e.dst) {
                outgoing.push(self.enc.edges[i]);
            }
        }
        let block = |tape: &mut Tape, xs: &[Var]| -> Result<Var, NeuralError> {
            if xs.is_empty() {
                return Ok(self.zero_edge);
            }
            let s = tape.add(xs)?;
            Ok(tape.scale(s, 1.0 / norm))
        };
        Ok([block(tape, &incoming)?, block(tape, &outgoing)?])
    }

    /// Buffer rows `[h; e_in; e_out]` against cache vertices, scored
    /// against `[s; s_push]`.
    fn buffer_logits(&self, tape: &mut Tape, cfg: &ParserConfiguration, query: Var) -> Result<Var, NeuralError> {
        let cache: Vec<ConceptId> = cfg.cache_members().collect();
        let k = cfg.cache_size() as f64;
        let mut rows = Vec::with_capacity(cfg.buffer().len());
        for &v in cfg.buffer() {
            let [ein, eout] = self.edge_blocks(tape, v, &cache, k)?;
            rows.push(tape.concat(&[self.enc.h[v.index()], ein, eout]));
        }
        let u = tape.matvec(self.p.u_beta, query)?;
        tape.dots(&rows, u)
    }

    /// Cache rows `[h; e_in; e_out]` against buffer vertices.
    fn cache_logits(&self, tape: &mut Tape, cfg: &ParserConfiguration, query: Var) -> Result<Var, NeuralError> {
        let buffer = cfg.buffer().to_vec();
        let norm = buffer.len().max(1) as f64;
        let mut rows = Vec::with_capacity(cfg.cache().len());
        for &slot in cfg.cache() {
            let row = match slot {
                CacheSlot::Sentinel => tape.concat(&[self.null, self.zero_edge, self.zero_edge]),
                CacheSlot::Concept(u) => {
                    let [ein, eout] = self.edge_blocks(tape, u, &buffer, norm)?;
                    tape.concat(&[self.enc.h[u.index()], ein, eout])
                }
            };
            rows.push(row);
        }
        let u = tape.matvec(self.p.u_eta, query)?;
        tape.dots(&rows, u)
    }

    fn word_step(&self, tape: &mut Tape, concept: ConceptId, st: &State) -> Result<(State, Var), NeuralError> {
        let c = tape.affine(self.p.eng_ctx.w, self.p.eng_ctx.b, self.enc.h[concept.index()])?;
        let e = tape.row(self.net.word_emb, st.prev)?;
        let x = tape.concat_affine(self.p.eng_in.w, self.p.eng_in.b, &[e, c])?;
        let english = lstm_step(tape, &self.p.eng_lstm, st.english, x)?;
        let logits = tape.concat_affine(self.p.eng_out.w, self.p.eng_out.b, &[english.cell, c, st.push])?;
        let next = State {
            english,
            last: english.hidden,
            ..*st
        };
        Ok((next, logits))
    }
}

fn setup<'a>(tape: &mut Tape, net: &'a Net, p: &'a JointParams, g: &'a AmrGraph) -> Result<(Ctx<'a>, State), NeuralError> {
    let enc = encode_graph(tape, net, g)?;
    let null = tape.param(net.null);
    let zero_edge = tape.zeros(net.config.edge_dim);
    let h = net.config.hidden;
    let zero = tape.zeros(h);
    let state = State {
        action: LstmState::zeros(tape, h),
        english: LstmState::zeros(tape, h),
        last: zero,
        push: zero,
        prev: BOS_ID,
    };
    Ok((
        Ctx {
            net,
            p,
            g,
            enc,
            null,
            zero_edge,
        },
        state,
    ))
}

/// `L_j`: cross-entropy over every position of the interleaved target plus
/// buffer and cache indices at each Push, teacher-forced. An empty span
/// contributes one `</ph>` target that is not part of the target sequence.
pub fn loss(tape: &mut Tape, net: &Net, p: &JointParams, ex: &Prepared) -> Result<(Var, Accuracy), DecodeError> {
    let (ctx, mut st) = setup(tape, net, p, &ex.graph)?;
    let t = &ex.trace;
    let mut acc = Accuracy::default();
    let mut terms = Vec::new();
    let out_mask = output_mask(net.vocab.len(), END_PHRASE_ID);

    let mut cfg = start(net, &ex.graph)?;
    let mut pushed = t.buffer_order.iter();
    for action in &t.actions {
        let (next, logits) = ctx.action_step(tape, &cfg, &st)?;
        st = next;
        let mask = action_mask(&cfg);
        let target = match action.kind() {
            Some(ActionKind::Push) => 0,
            _ => 1,
        };
        terms.push(tape.xent(logits, target, Some(&mask))?);
        acc.a.record(argmax(&tape.log_softmax(logits, Some(&mask))) == target);
        let Action::Push(index) = action else {
            cfg.apply_in_place(&Action::Pop)?;
            st.prev = POP_ID;
            continue;
        };
        let v = *pushed.next().expect("one buffer entry per push");
        let pos = cfg.buffer().iter().position(|&c| c == v).expect("gold concept in buffer");
        let query = tape.concat(&[st.action.hidden, st.push]);
        let lb = ctx.buffer_logits(tape, &cfg, query)?;
        terms.push(tape.xent(lb, pos, None)?);
        acc.i_beta.record(argmax(tape.value(lb)) == pos);
        let lc = ctx.cache_logits(tape, &cfg, query)?;
        terms.push(tape.xent(lc, index - 1, None)?);
        acc.i_eta.record(argmax(tape.value(lc)) == index - 1);
        cfg = cfg.push_buffer_element(pos, *index)?;
        st.push = st.action.hidden;
        st.prev = PUSH_ID;

        let targets = t.spans[v.index()]
            .iter()
            .map(|w| net.vocab.id(w))
            .chain(std::iter::once(END_PHRASE_ID));
        for target in targets {
            let (next, logits) = ctx.word_step(tape, v, &st)?;
            st = next;
            terms.push(tape.xent(logits, target, Some(&out_mask))?);
            acc.w.record(argmax(&tape.log_softmax(logits, Some(&out_mask))) == target);
            st.prev = target;
        }
    }
    Ok((total(tape, &terms)?, acc))
}

#[derive(Clone)]
struct Hyp {
    cfg: ParserConfiguration,
    st: State,
    score: f64,
    num_words: usize,
    actions: Vec<Action>,
    order: Vec<ConceptId>,
    spans: Vec<Vec<usize>>,
}

impl Hyp {
    fn rescored(&self, len_reward: f64) -> f64 {
        self.score + len_reward * self.num_words as f64
    }
}

/// Beam search over actions; each hypothesis ending in Push runs an
/// English beam for its span and is replaced by one child per finished
/// span.
pub fn generate(tape: &mut Tape, net: &Net, p: &JointParams, g: &AmrGraph, opts: &GenerateOptions) -> Result<Generated, DecodeError> {
    generate_traced(tape, net, p, g, opts, &mut |_| {})
}

/// [`generate`] that reports the number of action hypotheses before each
/// cut that follows the English subroutine.
pub fn generate_traced(
    tape: &mut Tape,
    net: &Net,
    p: &JointParams,
    g: &AmrGraph,
    opts: &GenerateOptions,
    on_expand: &mut dyn FnMut(usize),
) -> Result<Generated, DecodeError> {
    let beam = opts.beam.max(1);
    let eps = opts.len_reward;
    let (ctx, st) = setup(tape, net, p, g)?;
    let out_mask = output_mask(net.vocab.len(), END_PHRASE_ID);
    let mut hyps = vec![Hyp {
        cfg: start(net, g)?,
        st,
        score: 0.0,
        num_words: 0,
        actions: Vec::new(),
        order: Vec::new(),
        spans: Vec::new(),
    }];

    while !hyps[0].cfg.is_terminal() {
        // Action sub-step.
        let mut cands = Vec::new();
        for h in &hyps {
            let (st, logits) = ctx.action_step(tape, &h.cfg, &h.st)?;
            let logp = tape.log_softmax(logits, Some(&action_mask(&h.cfg)));
            for (a, &lp) in logp.iter().enumerate() {
                if lp.is_finite() {
                    let mut next = h.clone();
                    next.st = st;
                    next.score += lp;
                    cands.push((next, a == 0));
                }
            }
        }
        let cands = cut(cands, beam, |c| c.0.rescored(eps));

        // Buffer-index sub-step.
        let mut with_pos = Vec::new();
        for (h, push) in cands {
            if !push {
                with_pos.push((h, None));
                continue;
            }
            let query = tape.concat(&[h.st.action.hidden, h.st.push]);
            let lb = ctx.buffer_logits(tape, &h.cfg, query)?;
            let logp = tape.log_softmax(lb, None);
            for pos in top_n(&logp, beam) {
                let mut next = h.clone();
                next.score += logp[pos];
                with_pos.push((next, Some((pos, query))));
            }
        }
        let with_pos = cut(with_pos, beam, |c| c.0.rescored(eps));

        // Cache-index sub-step.
        let mut indexed = Vec::new();
        for (h, pick) in with_pos {
            let Some((pos, query)) = pick else {
                let mut next = h;
                next.cfg.apply_in_place(&Action::Pop)?;
                next.actions.push(Action::Pop);
                next.st.prev = POP_ID;
                indexed.push((next, false));
                continue;
            };
            let lc = ctx.cache_logits(tape, &h.cfg, query)?;
            let logp = tape.log_softmax(lc, None);
            for i in top_n(&logp, beam) {
                let mut next = h.clone();
                next.score += logp[i];
                next.order.push(h.cfg.buffer()[pos]);
                next.cfg = h.cfg.push_buffer_element(pos, i + 1)?;
                next.actions.push(Action::Push(i + 1));
                next.st.push = next.st.action.hidden;
                next.st.prev = PUSH_ID;
                next.spans.push(Vec::new());
                indexed.push((next, true));
            }
        }

        // English subroutine for every hypothesis that just pushed.
        let mut all = Vec::new();
        for (h, push) in cut(indexed, beam, |c| c.0.rescored(eps)) {
            if push {
                all.extend(english_beam(tape, &ctx, h, &out_mask, beam, eps, opts.max_words)?);
            } else {
                all.push(h);
            }
        }
        on_expand(all.len());
        hyps = cut(all, beam, |h| h.rescored(eps));
        if hyps.is_empty() {
            return Err(DecodeError::NoCompleteHypothesis);
        }
    }

    let best = hyps.swap_remove(0);
    let token = |w: &usize| net.vocab.token(*w).to_string();
    let spans: Vec<Vec<String>> = best.spans.iter().map(|s| s.iter().map(token).collect()).collect();
    Ok(Generated {
        words: spans.iter().flatten().cloned().collect(),
        actions: best.actions,
        order: best.order,
        spans,
        log_prob: best.score,
    })
}

/// Beam over the words of the span opened by `parent`'s last Push. An
/// immediate `</ph>` leaves the span empty.
fn english_beam(
    tape: &mut Tape,
    ctx: &Ctx,
    parent: Hyp,
    out_mask: &[bool],
    beam: usize,
    eps: f64,
    max_words: usize,
) -> Result<Vec<Hyp>, DecodeError> {
    let concept = *parent.order.last().expect("span follows a push");
    let mut active = vec![parent];
    let mut finished = Vec::new();
    for step in 0..=max_words {
        if active.is_empty() || finished.len() >= beam {
            break;
        }
        let mut cands = Vec::new();
        for h in &active {
            let (st, logits) = ctx.word_step(tape, concept, &h.st)?;
            let logp = tape.log_softmax(logits, Some(out_mask));
            for w in top_n(&logp, beam) {
                if w != END_PHRASE_ID && step == max_words {
                    continue;
                }
                let mut next = h.clone();
                next.st = st;
                next.st.prev = w;
                next.score += logp[w];
                if w != END_PHRASE_ID {
                    next.spans.last_mut().expect("open span").push(w);
                    next.num_words += 1;
                }
                cands.push(next);
            }
        }
        active.clear();
        for h in cut(cands, beam, |h| h.rescored(eps)) {
            if h.st.prev == END_PHRASE_ID {
                finished.push(h);
            } else {
                active.push(h);
            }
        }
    }
    Ok(finished)
}
