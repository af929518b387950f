from docd.cli import main
import sys

sys.exit(main())
