/**
 * convert --source <dir> --out <file> [--fixture <file>]
 *
 * Converts a GPT-2 safetensors checkpoint directory into the named-tensor
 * container consumed by the trading-policy backbone. With --fixture it also
 * writes a reference forward-pass fixture (fixed embedded input plus the
 * block-stack output) for cross-implementation verification.
 */

import { convert } from "./convert.js";

interface Args {
  source?: string;
  out?: string;
  fixture?: string;
  help?: boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {};
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "convert":
        break; // optional subcommand word
      case "--source":
        args.source = argv[++i];
        break;
      case "--out":
        args.out = argv[++i];
        break;
      case "--fixture":
        args.fixture = argv[++i];
        break;
      case "--help":
      case "-h":
        args.help = true;
        break;
      default:
        throw new UsageError(`unknown argument: ${argv[i]}`);
    }
  }
  return args;
}

class UsageError extends Error {}

const USAGE = `usage: convert --source <dir> --out <file> [--fixture <file>]

  --source   directory holding the GPT-2 safetensors checkpoint
  --out      output path for the named-tensor container
  --fixture  optional path for the forward-pass reference fixture
`;

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    console.error(USAGE);
    return 2;
  }
  if (args.help) {
    console.log(USAGE);
    return 0;
  }
  if (!args.source || !args.out) {
    console.error("both --source and --out are required");
    console.error(USAGE);
    return 2;
  }
  try {
    const summary = convert(args.source, args.out, args.fixture);
    console.log(
      `converted ${summary.nTensors} tensors (${summary.nBlocks} blocks, ` +
        `${summary.paramCount.toLocaleString("en-US")} parameters); ` +
        `${summary.transposed.length} matrices transposed to [out, in]`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

process.exitCode = main(process.argv.slice(2));
