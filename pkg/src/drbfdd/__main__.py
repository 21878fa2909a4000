from drbfdd.cli import main
import sys

sys.exit(main())
