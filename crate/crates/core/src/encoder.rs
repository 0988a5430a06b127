//! Graph encoder: synchronous neighborhood aggregation over the AMR graph.

use crate::amr::AmrGraph;
use crate::model::Net;
use crate::neural::{NeuralError, Tape, Var};

/// Per-concept states `[h; x]` and per-edge label embeddings, as tape
/// nodes.
#[derive(Clone, Debug)]
pub struct EncodedGraph {
    pub h: Vec<Var>,
    /// Label embedding of each edge, in graph edge order.
    pub edges: Vec<Var>,
    /// Label embedding of each concept.
    pub labels: Vec<Var>,
}

/// Runs `T` updates
/// `h_i <- tanh(W [x_i; h_i; Σin h_j; Σin x_j; Σin e; Σout h_j; Σout x_j; Σout e] + b)`
/// from `h_i = 0`, then appends each concept's label embedding.
pub fn encode_graph(tape: &mut Tape, net: &Net, g: &AmrGraph) -> Result<EncodedGraph, NeuralError> {
    let cfg = &net.config;
    let n = g.len();
    let labels: Vec<Var> = g
        .concepts()
        .iter()
        .map(|l| tape.row(net.word_emb, net.vocab.id(l)))
        .collect::<Result<_, _>>()?;
    let edges: Vec<Var> = g
        .edges()
        .iter()
        .map(|e| tape.row(net.rel_emb, net.relations.id(&e.label)))
        .collect::<Result<_, _>>()?;

    let sum_or_zero = |tape: &mut Tape, xs: &[Var], dim: usize| -> Result<Var, NeuralError> {
        if xs.is_empty() {
            Ok(tape.zeros(dim))
        } else if xs.len() == 1 {
            Ok(xs[0])
        } else {
            tape.add(xs)
        }
    };

    // Label and edge sums do not change across steps.
    let mut fixed = Vec::with_capacity(n);
    for c in g.concept_ids() {
        let in_x: Vec<Var> = g.incoming(c).map(|(_, e)| labels[e.src.index()]).collect();
        let in_e: Vec<Var> = g.incoming(c).map(|(i, _)| edges[i]).collect();
        let out_x: Vec<Var> = g.outgoing(c).map(|(_, e)| labels[e.dst.index()]).collect();
        let out_e: Vec<Var> = g.outgoing(c).map(|(i, _)| edges[i]).collect();
        fixed.push([
            sum_or_zero(tape, &in_x, cfg.embed_dim)?,
            sum_or_zero(tape, &in_e, cfg.edge_dim)?,
            sum_or_zero(tape, &out_x, cfg.embed_dim)?,
            sum_or_zero(tape, &out_e, cfg.edge_dim)?,
        ]);
    }

    let zero = tape.zeros(cfg.hidden);
    let mut h = vec![zero; n];
    for _ in 0..cfg.enc_steps {
        let mut next = Vec::with_capacity(n);
        for c in g.concept_ids() {
            let i = c.index();
            let in_h: Vec<Var> = g.incoming(c).map(|(_, e)| h[e.src.index()]).collect();
            let out_h: Vec<Var> = g.outgoing(c).map(|(_, e)| h[e.dst.index()]).collect();
            let in_h = sum_or_zero(tape, &in_h, cfg.hidden)?;
            let out_h = sum_or_zero(tape, &out_h, cfg.hidden)?;
            let [in_x, in_e, out_x, out_e] = fixed[i];
            let z = tape.concat_affine(
                net.encoder.w,
                net.encoder.b,
                &[labels[i], h[i], in_h, in_x, in_e, out_h, out_x, out_e],
            )?;
            next.push(tape.tanh(z));
        }
        h = next;
    }

    let h = h
        .iter()
        .zip(&labels)
        .map(|(&hi, &xi)| tape.concat(&[hi, xi]))
        .collect();
    Ok(EncodedGraph { h, edges, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amr::parse_penman;
    use crate::corpus::{parse_corpus, Vocabulary};
    use crate::model::{DecoderKind, Model, ModelConfig};

    fn model(steps: usize) -> Model {
        let ex = parse_corpus(crate::corpus::tests::SAMPLE_BLOCK).unwrap();
        let config = ModelConfig {
            decoder: DecoderKind::Joint,
            k: 3,
            hidden: 3,
            embed_dim: 2,
            edge_dim: 2,
            enc_steps: steps,
        };
        Model::new(config, Vocabulary::from_corpus(&ex), Vocabulary::relations_from_corpus(&ex), None, 11).unwrap()
    }

    #[test]
    fn zero_steps_give_zero_state_and_label() {
        let m = model(0);
        let g = parse_penman("(o / open-01 :ARG1 (c / center))").unwrap();
        let mut tape = Tape::new(&m.store);
        let enc = encode_graph(&mut tape, &m.net, &g).unwrap();
        let emb = m.store.value(m.net.word_emb).row(m.net.vocab.id("center")).to_vec();
        let h = tape.value(enc.h[1]);
        assert_eq!(&h[..3], [0.0; 3]);
        assert_eq!(&h[3..], emb.as_slice());
    }

    #[test]
    fn single_node_matches_scalar_trace() {
        let m = model(3);
        let g = parse_penman("(c / center)").unwrap();
        let mut tape = Tape::new(&m.store);
        let enc = encode_graph(&mut tape, &m.net, &g).unwrap();

        let w = m.store.value(m.net.encoder.w);
        let b = m.store.value(m.net.encoder.b).data();
        let x = m.store.value(m.net.word_emb).row(m.net.vocab.id("center")).to_vec();
        let cols = w.shape()[1];
        let mut h = [0.0f64; 3];
        for _ in 0..3 {
            let mut next = [0.0; 3];
            for (r, out) in next.iter_mut().enumerate() {
                let row = &w.data()[r * cols..(r + 1) * cols];
                // Only the x and h blocks are nonzero for an isolated node.
                let mut z = b[r];
                z += row[0] * x[0] + row[1] * x[1];
                z += row[2] * h[0] + row[3] * h[1] + row[4] * h[2];
                *out = z.tanh();
            }
            h = next;
        }
        let got = tape.value(enc.h[0]);
        for i in 0..3 {
            assert!((got[i] - h[i]).abs() < 1e-15);
        }
    }
}
