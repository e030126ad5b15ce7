from prunelab.cli import main
import sys

sys.exit(main())
